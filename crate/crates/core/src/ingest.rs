//! Sequence data model, on-disk formats and per-frame preprocessing.
//!
//! On disk a sequence is a JSON manifest plus per-frame binaries:
//!
//! * clouds: little-endian `f32` records `(x, y, z, intensity)`
//! * flows: little-endian `f32` records `(dx, dy, dz)`, index-aligned with
//!   the frame's cloud, in meters per frame
//! * detections: one JSON-lines file for the whole sequence
//!
//! Forward flow stored with frame `n` moves its points to frame `n + 1`;
//! backward flow moves them to frame `n - 1`. Flow vectors are ego-motion
//! compensated displacements expressed in the capturing sensor's axes, so
//! projecting a frame into the world only rotates them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ordered_float::OrderedFloat;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{Detection, DetectionSet, ObjectClass};
use crate::geometry::{azimuth, scale_box, transform_box, OrientedBox, RigidPose, Vec3};

const CLOUD_RECORD_BYTES: usize = 16;
const FLOW_RECORD_BYTES: usize = 12;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} (frame {frame}): {found} records but the cloud has {expected} points")]
    LengthMismatch {
        path: PathBuf,
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path} (frame {frame}): {bytes} bytes is not a whole number of {record}-byte records")]
    MalformedBinary {
        path: PathBuf,
        frame: usize,
        bytes: usize,
        record: usize,
    },
    #[error("{path} (frame {frame}): non-finite value in record {record}")]
    NonFinite {
        path: PathBuf,
        frame: usize,
        record: usize,
    },
    #[error("frame indices must be strictly increasing: {found} follows {previous}")]
    FrameOrder { previous: usize, found: usize },
    #[error("timestamps must be non-decreasing: frame {frame} at {timestamp}s precedes {previous}s")]
    TimestampOrder {
        frame: usize,
        timestamp: f64,
        previous: f64,
    },
    #[error("frame {frame}: invalid pose: {reason}")]
    InvalidPose { frame: usize, reason: String },
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame rate must be positive and finite, got {0}")]
    InvalidFrameRate(f64),
    #[error("{path}:{line}: {reason}")]
    InvalidDetection {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("detections reference frame {frame} which is not in the manifest")]
    UnknownFrame { frame: usize },
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Points with optional per-point reflectance in [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<Vec3>, intensity: Vec<f32>) -> Self {
        Self {
            points,
            intensity: Some(intensity),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.intensity
            .as_ref()
            .is_none_or(|v| v.len() == self.points.len())
            && self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Per-point motion vectors (meters per frame), index-aligned with a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<Vec3>,
    pub direction: FlowDirection,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>, direction: FlowDirection) -> Self {
        Self { vectors, direction }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> FlowField {
        FlowField {
            vectors: indices.iter().map(|&i| self.vectors[i]).collect(),
            direction: self.direction,
        }
    }
}

/// Detections of one frame keyed by the input scale they were produced at.
pub type ScaledDetections = BTreeMap<OrderedFloat<f64>, DetectionSet>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub cloud: PointCloud,
    /// Sensor -> world.
    pub pose: RigidPose,
    pub forward_flow: Option<FlowField>,
    pub backward_flow: Option<FlowField>,
    pub detections: ScaledDetections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequence_id: String,
    pub frames: Vec<FrameRecord>,
    pub frame_rate: f64,
}

impl SequenceDataset {
    /// Checks every cross-record invariant that loading enforces.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.frames.is_empty() {
            return Err(IngestError::EmptySequence);
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(IngestError::InvalidFrameRate(self.frame_rate));
        }
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(IngestError::FrameOrder {
                    previous: pair[0].index,
                    found: pair[1].index,
                });
            }
            if pair[1].timestamp < pair[0].timestamp {
                return Err(IngestError::TimestampOrder {
                    frame: pair[1].index,
                    timestamp: pair[1].timestamp,
                    previous: pair[0].timestamp,
                });
            }
        }
        for frame in &self.frames {
            if !frame.cloud.is_consistent() {
                return Err(IngestError::Invalid(format!(
                    "frame {}: cloud has non-finite points or misaligned intensity",
                    frame.index
                )));
            }
            for flow in [&frame.forward_flow, &frame.backward_flow].into_iter().flatten() {
                if flow.len() != frame.cloud.len() {
                    return Err(IngestError::LengthMismatch {
                        path: PathBuf::from(format!("<frame {} flow>", frame.index)),
                        frame: frame.index,
                        expected: frame.cloud.len(),
                        found: flow.len(),
                    });
                }
            }
            for (scale, set) in &frame.detections {
                if set.detections.iter().any(|d| d.frame != frame.index) || set.frame != frame.index
                {
                    return Err(IngestError::Invalid(format!(
                        "frame {}: detection set at scale {} carries a foreign frame index",
                        frame.index, scale
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn position_of(&self, frame_index: usize) -> Option<usize> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.index)
            .ok()
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequence_id: String,
    pub frame_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub index: usize,
    pub timestamp: f64,
    pub cloud: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward_flow: Option<PathBuf>,
    /// Row-major `[R | t]`, sensor -> world.
    pub pose: Vec<f64>,
}

/// One line of a detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: usize,
    pub scale: f64,
    pub class: ObjectClass,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub heading: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(scale: f64, d: &Detection) -> Self {
        Self {
            frame: d.frame,
            scale,
            class: d.class,
            cx: d.bbox.center.x,
            cy: d.bbox.center.y,
            cz: d.bbox.center.z,
            l: d.bbox.dims.x,
            w: d.bbox.dims.y,
            h: d.bbox.dims.z,
            heading: d.bbox.heading,
            score: d.score,
        }
    }

    pub fn to_detection(&self) -> Result<Detection, String> {
        let bbox = OrientedBox::new(
            Vec3::new(self.cx, self.cy, self.cz),
            Vec3::new(self.l, self.w, self.h),
            self.heading,
        )
        .map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(format!("scale {} must be positive", self.scale));
        }
        Ok(Detection {
            frame: self.frame,
            class: self.class,
            bbox,
            score: self.score,
            point_count: 0,
        })
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|e| IngestError::io(path, e))
}

fn f32_at(chunk: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().expect("4-byte slice"))
}

/// Reads an `N x 4` float32 cloud file.
pub fn read_cloud(path: &Path, frame: usize) -> Result<PointCloud, IngestError> {
    let bytes = read_bytes(path)?;
    if bytes.len() % CLOUD_RECORD_BYTES != 0 {
        return Err(IngestError::MalformedBinary {
            path: path.to_path_buf(),
            frame,
            bytes: bytes.len(),
            record: CLOUD_RECORD_BYTES,
        });
    }
    let n = bytes.len() / CLOUD_RECORD_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (record, chunk) in bytes.chunks_exact(CLOUD_RECORD_BYTES).enumerate() {
        let v = [0, 1, 2, 3].map(|i| f32_at(chunk, i));
        if !v.iter().all(|x| x.is_finite()) {
            return Err(IngestError::NonFinite {
                path: path.to_path_buf(),
                frame,
                record,
            });
        }
        points.push(Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64));
        intensity.push(v[3]);
    }
    Ok(PointCloud::with_intensity(points, intensity))
}

/// Writes an `N x 4` float32 cloud file. Missing intensity is written as 0.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IngestError> {
    let mut out = Vec::with_capacity(cloud.len() * CLOUD_RECORD_BYTES);
    for (i, p) in cloud.points.iter().enumerate() {
        let intensity = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for x in [p.x as f32, p.y as f32, p.z as f32, intensity] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

pub fn read_flow(
    path: &Path,
    frame: usize,
    direction: FlowDirection,
) -> Result<FlowField, IngestError> {
    let bytes = read_bytes(path)?;
    if bytes.len() % FLOW_RECORD_BYTES != 0 {
        return Err(IngestError::MalformedBinary {
            path: path.to_path_buf(),
            frame,
            bytes: bytes.len(),
            record: FLOW_RECORD_BYTES,
        });
    }
    let mut vectors = Vec::with_capacity(bytes.len() / FLOW_RECORD_BYTES);
    for (record, chunk) in bytes.chunks_exact(FLOW_RECORD_BYTES).enumerate() {
        let v = [0, 1, 2].map(|i| f32_at(chunk, i));
        if !v.iter().all(|x| x.is_finite()) {
            return Err(IngestError::NonFinite {
                path: path.to_path_buf(),
                frame,
                record,
            });
        }
        vectors.push(Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64));
    }
    Ok(FlowField::new(vectors, direction))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), IngestError> {
    let mut out = Vec::with_capacity(flow.len() * FLOW_RECORD_BYTES);
    for v in &flow.vectors {
        for x in [v.x as f32, v.y as f32, v.z as f32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

pub fn read_detection_records(path: &Path) -> Result<Vec<DetectionRecord>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::InvalidDetection {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_detection_records(path: &Path, records: &[DetectionRecord]) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("detection records serialize");
        writeln!(out, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

fn load_manifest(path: &Path) -> Result<Manifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a sequence from its manifest and validates every cross-file
/// invariant.
pub fn load_sequence(manifest_path: &Path) -> Result<SequenceDataset, IngestError> {
    let manifest = load_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    if !(manifest.frame_rate.is_finite() && manifest.frame_rate > 0.0) {
        return Err(IngestError::InvalidFrameRate(manifest.frame_rate));
    }
    if manifest.frames.is_empty() {
        return Err(IngestError::EmptySequence);
    }
    for pair in manifest.frames.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(IngestError::FrameOrder {
                previous: pair[0].index,
                found: pair[1].index,
            });
        }
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        let pose = RigidPose::from_row_major(&mf.pose).map_err(|e| IngestError::InvalidPose {
            frame: mf.index,
            reason: e.to_string(),
        })?;
        let cloud = read_cloud(&root.join(&mf.cloud), mf.index)?;
        let load_flow = |rel: &Option<PathBuf>, direction| -> Result<_, IngestError> {
            let Some(rel) = rel else { return Ok(None) };
            let path = root.join(rel);
            let flow = read_flow(&path, mf.index, direction)?;
            if flow.len() != cloud.len() {
                return Err(IngestError::LengthMismatch {
                    path,
                    frame: mf.index,
                    expected: cloud.len(),
                    found: flow.len(),
                });
            }
            Ok(Some(flow))
        };
        let forward_flow = load_flow(&mf.forward_flow, FlowDirection::Forward)?;
        let backward_flow = load_flow(&mf.backward_flow, FlowDirection::Backward)?;
        frames.push(FrameRecord {
            index: mf.index,
            timestamp: mf.timestamp,
            cloud,
            pose,
            forward_flow,
            backward_flow,
            detections: BTreeMap::new(),
        });
    }

    let mut dataset = SequenceDataset {
        sequence_id: manifest.sequence_id.clone(),
        frames,
        frame_rate: manifest.frame_rate,
    };

    if let Some(rel) = &manifest.detections {
        let path = root.join(rel);
        for (line, record) in read_detection_records(&path)?.iter().enumerate() {
            let det = record
                .to_detection()
                .map_err(|reason| IngestError::InvalidDetection {
                    path: path.clone(),
                    line: line + 1,
                    reason,
                })?;
            let pos = dataset
                .position_of(record.frame)
                .ok_or(IngestError::UnknownFrame {
                    frame: record.frame,
                })?;
            dataset.frames[pos]
                .detections
                .entry(OrderedFloat(record.scale))
                .or_insert_with(|| DetectionSet::new(record.frame))
                .detections
                .push(det);
        }
    }

    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset in the on-disk layout and returns the manifest path.
///
/// Coordinates are stored as `f32`; a dataset whose values are already
/// `f32`-representable and whose clouds carry intensity reloads bit-exactly.
pub fn write_sequence(dataset: &SequenceDataset, dir: &Path) -> Result<PathBuf, IngestError> {
    dataset.validate()?;
    for sub in ["clouds", "flow"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| IngestError::io(&p, e))?;
    }
    let mut manifest_frames = Vec::with_capacity(dataset.frames.len());
    let mut records = Vec::new();
    for frame in &dataset.frames {
        let cloud_rel = PathBuf::from(format!("clouds/{:06}.bin", frame.index));
        write_cloud(&dir.join(&cloud_rel), &frame.cloud)?;
        let flow_rel = |flow: &Option<FlowField>, tag: &str| -> Result<_, IngestError> {
            let Some(flow) = flow else { return Ok(None) };
            let rel = PathBuf::from(format!("flow/{:06}_{tag}.bin", frame.index));
            write_flow(&dir.join(&rel), flow)?;
            Ok(Some(rel))
        };
        let forward_flow = flow_rel(&frame.forward_flow, "fwd")?;
        let backward_flow = flow_rel(&frame.backward_flow, "bwd")?;
        manifest_frames.push(ManifestFrame {
            index: frame.index,
            timestamp: frame.timestamp,
            cloud: cloud_rel,
            forward_flow,
            backward_flow,
            pose: frame.pose.to_row_major().to_vec(),
        });
        for (scale, set) in &frame.detections {
            records.extend(
                set.detections
                    .iter()
                    .map(|d| DetectionRecord::from_detection(scale.0, d)),
            );
        }
    }
    let det_rel = PathBuf::from("detections.jsonl");
    write_detection_records(&dir.join(&det_rel), &records)?;
    let manifest = Manifest {
        sequence_id: dataset.sequence_id.clone(),
        frame_rate: dataset.frame_rate,
        detections: Some(det_rel),
        frames: manifest_frames,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| IngestError::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Expresses a frame in the world frame: cloud points are moved, flow vectors
/// are only rotated. Detections at scale `s` live in `s`-scaled space, so they
/// are mapped back to metric space, moved, and re-scaled about the world
/// origin; `fuse_multiscale` then recovers the metric world box. The pose is
/// kept so that sensor-frame quantities (azimuth) stay computable.
pub fn to_world(frame: &FrameRecord) -> FrameRecord {
    let pose = &frame.pose;
    let rotate = |flow: &FlowField| FlowField {
        vectors: flow.vectors.iter().map(|v| pose.apply_vector(v)).collect(),
        direction: flow.direction,
    };
    let detections = frame
        .detections
        .iter()
        .map(|(scale, set)| {
            let s = scale.0;
            let moved = set
                .detections
                .iter()
                .map(|d| {
                    let metric = scale_box(&d.bbox, 1.0 / s).expect("scale validated on load");
                    let world = transform_box(pose, &metric);
                    Detection {
                        bbox: scale_box(&world, s).expect("scale validated on load"),
                        ..d.clone()
                    }
                })
                .collect();
            (
                *scale,
                DetectionSet {
                    frame: set.frame,
                    detections: moved,
                },
            )
        })
        .collect();
    FrameRecord {
        index: frame.index,
        timestamp: frame.timestamp,
        cloud: crate::geometry::transform_cloud(pose, &frame.cloud),
        pose: frame.pose,
        forward_flow: frame.forward_flow.as_ref().map(rotate),
        backward_flow: frame.backward_flow.as_ref().map(rotate),
        detections,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Inlier distance to the plane, meters.
    pub distance_threshold: f64,
    pub max_iterations: usize,
    /// Below this inlier fraction no ground plane is reported.
    pub min_inlier_ratio: f64,
    /// Maximum angle between the plane normal and +z, degrees.
    pub max_tilt_deg: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            distance_threshold: 0.2,
            max_iterations: 100,
            min_inlier_ratio: 0.15,
            max_tilt_deg: 30.0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.distance_threshold.is_finite() && self.distance_threshold > 0.0) {
            return Err("ransac.distance_threshold must be positive".into());
        }
        if self.max_iterations == 0 {
            return Err("ransac.max_iterations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return Err("ransac.min_inlier_ratio must lie in [0, 1]".into());
        }
        if !(self.max_tilt_deg > 0.0 && self.max_tilt_deg <= 90.0) {
            return Err("ransac.max_tilt_deg must lie in (0, 90]".into());
        }
        Ok(())
    }
}

/// Plane `normal . p + offset = 0` with a unit normal pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.normal.dot(p) + self.offset).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRemoval {
    /// Input minus the plane inliers (the input itself when no plane).
    pub cloud: PointCloud,
    /// `None` when no plane reached the minimum inlier ratio.
    pub plane: Option<Plane>,
    /// Indices into the input of the points that were kept.
    pub kept: Vec<usize>,
    pub inlier_count: usize,
}

/// RANSAC ground-plane fit and removal. Deterministic for a fixed seed.
pub fn remove_ground(
    cloud: &PointCloud,
    params: &RansacParams,
    seed: u64,
) -> Result<GroundRemoval, IngestError> {
    let n = cloud.len();
    if n < 3 {
        return Err(IngestError::Invalid(format!(
            "ground removal needs at least 3 points, got {n}"
        )));
    }
    let min_normal_z = params.max_tilt_deg.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..params.max_iterations {
        let idx = sample(&mut rng, n, 3);
        let (a, b, c) = (
            cloud.points[idx.index(0)],
            cloud.points[idx.index(1)],
            cloud.points[idx.index(2)],
        );
        let mut normal = (b - a).cross(&(c - a));
        let norm = normal.norm();
        if norm < 1e-9 {
            continue;
        }
        normal /= norm;
        if normal.z < 0.0 {
            normal = -normal;
        }
        if normal.z < min_normal_z {
            continue;
        }
        let plane = Plane {
            normal,
            offset: -normal.dot(&a),
        };
        let inliers = cloud
            .points
            .iter()
            .filter(|p| plane.distance(p) <= params.distance_threshold)
            .count();
        if best.is_none_or(|(_, count)| inliers > count) {
            best = Some((plane, inliers));
        }
    }

    match best {
        Some((plane, count)) if count as f64 >= params.min_inlier_ratio * n as f64 => {
            let kept: Vec<usize> = (0..n)
                .filter(|&i| plane.distance(&cloud.points[i]) > params.distance_threshold)
                .collect();
            Ok(GroundRemoval {
                cloud: cloud.select(&kept),
                plane: Some(plane),
                kept,
                inlier_count: count,
            })
        }
        _ => Ok(GroundRemoval {
            cloud: cloud.clone(),
            plane: None,
            kept: (0..n).collect(),
            inlier_count: 0,
        }),
    }
}

/// Uniformly subsamples the larger cloud (without replacement, original order
/// preserved) down to the size of the smaller one.
pub fn match_sizes(
    a: &PointCloud,
    b: &PointCloud,
    seed: u64,
) -> Result<(PointCloud, PointCloud), IngestError> {
    if a.is_empty() || b.is_empty() {
        return Err(IngestError::Invalid(
            "cannot match sizes of an empty cloud".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shrink = |cloud: &PointCloud, target: usize| {
        let mut idx = sample(&mut rng, cloud.len(), target).into_vec();
        idx.sort_unstable();
        cloud.select(&idx)
    };
    Ok(match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => (a.clone(), b.clone()),
        std::cmp::Ordering::Greater => (shrink(a, b.len()), b.clone()),
        std::cmp::Ordering::Less => (a.clone(), shrink(b, a.len())),
    })
}

/// True when a sensor-frame position lies within `half_angle_deg` of +x.
pub fn in_fov(p: &Vec3, half_angle_deg: f64) -> bool {
    azimuth(p).abs() <= half_angle_deg.to_radians()
}

/// Indices of sensor-frame points inside the FOV wedge.
pub fn fov_indices(points: &[Vec3], half_angle_deg: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| in_fov(p, half_angle_deg))
        .map(|(i, _)| i)
        .collect()
}

/// Crops a sensor-frame cloud to the FOV wedge.
pub fn crop_cloud_fov(cloud: &PointCloud, half_angle_deg: f64) -> PointCloud {
    cloud.select(&fov_indices(&cloud.points, half_angle_deg))
}

/// Keeps detections whose (sensor-frame) box center lies in the FOV wedge.
/// Uniform scaling does not change azimuth, so this works at any scale.
pub fn crop_detections_fov(set: &DetectionSet, half_angle_deg: f64) -> DetectionSet {
    DetectionSet {
        frame: set.frame,
        detections: set
            .detections
            .iter()
            .filter(|d| in_fov(&d.bbox.center, half_angle_deg))
            .cloned()
            .collect(),
    }
}

/// Crops a sensor-frame record: cloud, both flows (kept index-aligned) and
/// every detection scale.
pub fn crop_frame_fov(frame: &FrameRecord, half_angle_deg: f64) -> FrameRecord {
    let keep = fov_indices(&frame.cloud.points, half_angle_deg);
    FrameRecord {
        index: frame.index,
        timestamp: frame.timestamp,
        cloud: frame.cloud.select(&keep),
        pose: frame.pose,
        forward_flow: frame.forward_flow.as_ref().map(|f| f.select(&keep)),
        backward_flow: frame.backward_flow.as_ref().map(|f| f.select(&keep)),
        detections: frame
            .detections
            .iter()
            .map(|(s, set)| (*s, crop_detections_fov(set, half_angle_deg)))
            .collect(),
    }
}
