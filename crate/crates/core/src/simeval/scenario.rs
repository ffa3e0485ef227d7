//! Synthetic sequences with exact ground truth.
//!
//! Objects are boxes resting on a flat ground at z = 0 and moving with
//! piecewise-constant velocity. Each object carries a fixed set of surface
//! samples in its local frame, so the same physical point appears in every
//! frame it is visible in and its flow is the exact object displacement.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fusion::ObjectClass;
use crate::geometry::{OrientedBox, RigidPose, Vec3};
use crate::ingest::{in_fov, FlowDirection, FlowField, FrameRecord, PointCloud, SequenceDataset};

use super::SimError;

pub(crate) const GROUND_INTENSITY: f32 = 0.25;
pub(crate) const OBJECT_INTENSITY: f32 = 0.5;

/// Per-purpose RNG so changing one stream never shifts another.
pub(crate) fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mixed = seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

pub(crate) fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSpec {
    /// Sensor position at frame 0, meters.
    pub start: [f64; 3],
    pub yaw: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// rad/s.
    pub yaw_rate: f64,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 1.8],
            yaw: 0.0,
            speed: 0.0,
            yaw_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSpec {
    pub points_per_frame: usize,
    /// Ground samples start this far from the sensor, meters.
    pub min_range: f64,
}

impl Default for GroundSpec {
    fn default() -> Self {
        Self {
            points_per_frame: 4000,
            min_range: 2.0,
        }
    }
}

/// Velocity (m/s, world xy) that holds from `start_frame` until the next
/// segment starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_frame: usize,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    /// (l, w, h), meters.
    pub dims: [f64; 3],
    /// World xy of the box center at frame 0.
    pub start: [f64; 2],
    #[serde(default)]
    pub heading: f64,
    /// Empty for a static object.
    #[serde(default)]
    pub segments: Vec<Segment>,
    /// Surface samples per square meter.
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_density() -> f64 {
    10.0
}

impl ObjectSpec {
    pub fn parked(class: ObjectClass, dims: [f64; 3], start: [f64; 2], heading: f64) -> Self {
        Self {
            class,
            dims,
            start,
            heading,
            segments: Vec::new(),
            density: default_density(),
        }
    }

    /// Constant velocity from frame 0, heading along the motion.
    pub fn moving(class: ObjectClass, dims: [f64; 3], start: [f64; 2], velocity: [f64; 2]) -> Self {
        Self {
            class,
            dims,
            start,
            heading: velocity[1].atan2(velocity[0]),
            segments: vec![Segment {
                start_frame: 0,
                velocity,
            }],
            density: default_density(),
        }
    }

    /// Box centers for frames `0..frames`.
    pub fn trajectory(&self, frames: usize, frame_rate: f64) -> Vec<OrientedBox> {
        let dims = Vec3::from(self.dims);
        let mut center = Vec3::new(self.start[0], self.start[1], self.dims[2] / 2.0);
        let mut out = Vec::with_capacity(frames);
        for n in 0..frames {
            out.push(OrientedBox {
                center,
                dims,
                heading: crate::geometry::normalize_angle(self.heading),
            });
            if let Some(seg) = self.segments.iter().rev().find(|s| s.start_frame <= n) {
                center += Vec3::new(seg.velocity[0], seg.velocity[1], 0.0) / frame_rate;
            }
        }
        out
    }
}

/// Logistic score in the number of visible points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreModel {
    pub midpoint: f64,
    pub steepness: f64,
    pub min: f64,
    pub max: f64,
    /// Standard deviation of Gaussian score noise.
    pub jitter: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            midpoint: 20.0,
            steepness: 8.0,
            min: 0.5,
            max: 0.99,
            jitter: 0.05,
        }
    }
}

impl ScoreModel {
    pub fn mean_score(&self, points: usize) -> f64 {
        1.0 / (1.0 + (-(points as f64 - self.midpoint) / self.steepness).exp())
    }

    pub fn sample(&self, points: usize, rng: &mut impl Rng) -> f64 {
        let s = self.mean_score(points) + normal(self.jitter).sample(rng);
        s.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub dropout: f64,
    pub center_sigma: f64,
    pub dim_sigma: f64,
    pub heading_sigma: f64,
    /// Per-component flow noise, meters per frame.
    pub flow_sigma: f64,
    /// Mean number of false detections per frame.
    pub clutter_rate: f64,
    pub score: ScoreModel,
    pub clutter_score: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            dropout: 0.0,
            center_sigma: 0.0,
            dim_sigma: 0.0,
            heading_sigma: 0.0,
            flow_sigma: 0.0,
            clutter_rate: 0.0,
            score: ScoreModel::default(),
            clutter_score: [0.5, 0.95],
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            score: ScoreModel {
                jitter: 0.0,
                ..ScoreModel::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub sequence_id: String,
    /// Number of frames.
    pub duration: usize,
    pub frame_rate: f64,
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    /// Surface samples beyond this range survive with probability
    /// `(reference / range)^2`.
    pub density_reference_range: f64,
    pub backward_flow: bool,
    pub scales: Vec<f64>,
    pub ego: EgoSpec,
    pub ground: GroundSpec,
    pub objects: Vec<ObjectSpec>,
    pub noise: NoiseSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            sequence_id: "synthetic".into(),
            duration: 50,
            frame_rate: 10.0,
            fov_half_angle_deg: 60.0,
            max_range: 75.0,
            density_reference_range: 15.0,
            backward_flow: true,
            scales: vec![0.8, 1.0, 1.2],
            ego: EgoSpec::default(),
            ground: GroundSpec::default(),
            objects: Vec::new(),
            noise: NoiseSpec::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<(), SimError> {
    if ok {
        Ok(())
    } else {
        Err(SimError::InvalidSpec(msg.to_string()))
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        check(self.duration >= 1, "duration must be at least one frame")?;
        check(self.frame_rate.is_finite() && self.frame_rate > 0.0, "frame_rate must be positive")?;
        check(
            self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg <= 180.0,
            "fov_half_angle_deg must lie in (0, 180]",
        )?;
        check(self.max_range > 0.0, "max_range must be positive")?;
        check(
            self.density_reference_range > 0.0,
            "density_reference_range must be positive",
        )?;
        check(
            !self.scales.is_empty() && self.scales.iter().all(|s| s.is_finite() && *s > 0.0),
            "scales must be a non-empty list of positive numbers",
        )?;
        check(
            self.ego.start.iter().chain([&self.ego.yaw, &self.ego.speed, &self.ego.yaw_rate])
                .all(|v| v.is_finite()),
            "ego parameters must be finite",
        )?;
        check(
            self.ground.min_range >= 0.0 && self.ground.min_range < self.max_range,
            "ground.min_range must lie in [0, max_range)",
        )?;
        for (i, o) in self.objects.iter().enumerate() {
            check(
                o.dims.iter().all(|d| d.is_finite() && *d > 0.0),
                &format!("object {i}: dims must be positive"),
            )?;
            check(
                o.density.is_finite() && o.density >= 0.0,
                &format!("object {i}: density must be non-negative"),
            )?;
            check(
                o.start.iter().chain([&o.heading]).all(|v| v.is_finite())
                    && o.segments.iter().all(|s| s.velocity.iter().all(|v| v.is_finite())),
                &format!("object {i}: position, heading and velocities must be finite"),
            )?;
            check(
                o.segments.windows(2).all(|w| w[0].start_frame < w[1].start_frame),
                &format!("object {i}: segments must be ordered by start_frame"),
            )?;
        }
        let n = &self.noise;
        check((0.0..=1.0).contains(&n.dropout), "noise.dropout must lie in [0, 1]")?;
        for (name, v) in [
            ("center_sigma", n.center_sigma),
            ("dim_sigma", n.dim_sigma),
            ("heading_sigma", n.heading_sigma),
            ("flow_sigma", n.flow_sigma),
            ("clutter_rate", n.clutter_rate),
            ("score.jitter", n.score.jitter),
        ] {
            check(v.is_finite() && v >= 0.0, &format!("noise.{name} must be non-negative"))?;
        }
        check(n.score.steepness > 0.0, "noise.score.steepness must be positive")?;
        check(
            0.0 <= n.score.min && n.score.min <= n.score.max && n.score.max <= 1.0,
            "noise.score bounds must satisfy 0 <= min <= max <= 1",
        )?;
        check(
            0.0 <= n.clutter_score[0] && n.clutter_score[0] < n.clutter_score[1] && n.clutter_score[1] <= 1.0,
            "noise.clutter_score must be an increasing range within [0, 1]",
        )?;
        Ok(())
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))?;
        let spec: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Sensor -> world pose for each frame.
    pub fn ego_poses(&self) -> Vec<RigidPose> {
        let mut pos = Vec3::from(self.ego.start);
        let mut out = Vec::with_capacity(self.duration);
        for n in 0..self.duration {
            let yaw = self.ego.yaw + self.ego.yaw_rate * n as f64 / self.frame_rate;
            out.push(RigidPose::from_yaw(yaw, pos));
            pos += Vec3::new(yaw.cos(), yaw.sin(), 0.0) * self.ego.speed / self.frame_rate;
        }
        out
    }

    /// 200 frames of mixed traffic: parked cars along the road, vehicles
    /// driving with and against the ego, a cyclist and two pedestrians.
    /// Detection noise matches the recall-lift check.
    pub fn mixed_traffic() -> Self {
        use ObjectClass::*;
        const CAR: [f64; 3] = [4.5, 1.9, 1.6];
        let objects = vec![
            ObjectSpec::parked(Vehicle, CAR, [18.0, -6.0], 0.0),
            ObjectSpec::parked(Vehicle, CAR, [32.0, 7.0], 0.05),
            ObjectSpec::parked(Vehicle, CAR, [45.0, -8.0], std::f64::consts::PI),
            ObjectSpec::parked(Vehicle, [4.8, 2.0, 1.7], [58.0, 10.0], 0.0),
            ObjectSpec::moving(Vehicle, CAR, [8.0, -2.5], [3.0, 0.0]),
            ObjectSpec::moving(Vehicle, CAR, [70.0, 2.5], [-2.5, 0.0]),
            ObjectSpec {
                segments: vec![
                    Segment { start_frame: 0, velocity: [2.0, 0.0] },
                    Segment { start_frame: 100, velocity: [3.0, 0.0] },
                ],
                ..ObjectSpec::moving(Vehicle, CAR, [25.0, -2.5], [2.0, 0.0])
            },
            ObjectSpec {
                density: 20.0,
                ..ObjectSpec::moving(Cyclist, [1.8, 0.7, 1.7], [15.0, 4.5], [2.0, 0.0])
            },
            ObjectSpec {
                density: 30.0,
                ..ObjectSpec::moving(Pedestrian, [0.8, 0.7, 1.8], [14.0, -9.0], [1.0, 0.0])
            },
            ObjectSpec {
                density: 30.0,
                ..ObjectSpec::parked(Pedestrian, [0.8, 0.7, 1.8], [20.0, 9.0], 1.2)
            },
        ];
        Self {
            sequence_id: "mixed_traffic".into(),
            duration: 200,
            ego: EgoSpec {
                speed: 1.0,
                ..EgoSpec::default()
            },
            objects,
            noise: NoiseSpec {
                dropout: 0.4,
                center_sigma: 0.1,
                dim_sigma: 0.05,
                heading_sigma: 0.03,
                flow_sigma: 0.02,
                clutter_rate: 0.5,
                ..NoiseSpec::default()
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub class: ObjectClass,
    /// World frame.
    pub bbox: OrientedBox,
    /// Points emitted on the object in this frame.
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub index: usize,
    /// Sensor -> world.
    pub pose: RigidPose,
    /// Objects with at least one emitted point.
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sequence_id: String,
    pub frame_rate: f64,
    pub frames: Vec<GtFrame>,
}

impl GroundTruth {
    pub fn frame(&self, index: usize) -> Option<&GtFrame> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

/// Local-frame surface samples with a fixed keep threshold each.
struct Surface {
    local: Vec<Vec3>,
    keep: Vec<f64>,
}

/// Samples the top and the four sides, slightly inset so that every sample
/// is strictly inside the box.
fn sample_surface(dims: &Vec3, density: f64, rng: &mut ChaCha8Rng) -> Surface {
    const INSET: f64 = 0.97;
    let half = dims * 0.5 * INSET;
    let (l, w, h) = (dims.x, dims.y, dims.z);
    let mut local = Vec::new();
    let mut face = |count: f64, rng: &mut ChaCha8Rng, f: &dyn Fn(f64, f64) -> Vec3| {
        for _ in 0..count.round() as usize {
            let (a, b) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            local.push(f(a, b));
        }
    };
    face(density * l * w, rng, &|a, b| Vec3::new(a * half.x, b * half.y, half.z));
    for sign in [-1.0, 1.0] {
        face(density * l * h, rng, &|a, b| Vec3::new(a * half.x, sign * half.y, b * half.z));
        face(density * w * h, rng, &|a, b| Vec3::new(sign * half.x, a * half.y, b * half.z));
    }
    let keep = (0..local.len()).map(|_| rng.random::<f64>()).collect();
    Surface { local, keep }
}

fn local_to_world(bx: &OrientedBox, p: &Vec3) -> Vec3 {
    let (s, c) = bx.heading.sin_cos();
    bx.center + Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
}

fn inside_footprint(bx: &OrientedBox, p: &Vec3, margin: f64) -> bool {
    let q = bx.to_local(p);
    q.x.abs() <= bx.dims.x / 2.0 + margin && q.y.abs() <= bx.dims.y / 2.0 + margin
}

/// Builds clouds, exact flow and ground truth. Detections are left empty;
/// see [`super::simulate_detections`].
pub fn generate_scenario(
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<(SequenceDataset, GroundTruth), SimError> {
    spec.validate()?;
    let n_frames = spec.duration;
    let poses = spec.ego_poses();
    let trajectories: Vec<Vec<OrientedBox>> = spec
        .objects
        .iter()
        .map(|o| o.trajectory(n_frames, spec.frame_rate))
        .collect();
    let surfaces: Vec<Surface> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| sample_surface(&Vec3::from(o.dims), o.density, &mut stream_rng(seed, 1, i as u64)))
        .collect();
    let flow_noise = normal(spec.noise.flow_sigma);
    let keep_probability = |range: f64| (spec.density_reference_range / range).powi(2).min(1.0);
    let half_angle = spec.fov_half_angle_deg.to_radians();

    let mut frames = Vec::with_capacity(n_frames);
    let mut gt_frames = Vec::with_capacity(n_frames);
    for n in 0..n_frames {
        let pose = poses[n];
        let to_sensor = pose.inverse();
        let mut rng = stream_rng(seed, 2, n as u64);
        let mut points = Vec::new();
        let mut intensity = Vec::new();
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        let noisy = |v: Vec3, rng: &mut ChaCha8Rng| {
            v + Vec3::new(
                flow_noise.sample(rng),
                flow_noise.sample(rng),
                flow_noise.sample(rng),
            )
        };

        let mut gt_objects = Vec::new();
        for (id, (obj, surface)) in spec.objects.iter().zip(&surfaces).enumerate() {
            let bx = trajectories[id][n];
            let next = (n + 1 < n_frames).then(|| to_sensor.apply_vector(&(trajectories[id][n + 1].center - bx.center)));
            let prev = (n > 0).then(|| to_sensor.apply_vector(&(trajectories[id][n - 1].center - bx.center)));
            let mut emitted = 0;
            for (p, &u) in surface.local.iter().zip(&surface.keep) {
                let s = to_sensor.apply_point(&local_to_world(&bx, p));
                let range = s.norm();
                if range > spec.max_range || !in_fov(&s, spec.fov_half_angle_deg) || u >= keep_probability(range) {
                    continue;
                }
                emitted += 1;
                points.push(s);
                intensity.push(OBJECT_INTENSITY);
                if let Some(v) = next {
                    forward.push(noisy(v, &mut rng));
                }
                if let Some(v) = prev {
                    backward.push(noisy(v, &mut rng));
                }
            }
            if emitted > 0 {
                gt_objects.push(GtObject {
                    id: id as u64,
                    class: obj.class,
                    bbox: bx,
                    point_count: emitted,
                });
            }
        }

        let mut placed = 0;
        while placed < spec.ground.points_per_frame {
            let az = rng.random_range(-half_angle..=half_angle);
            let r = rng.random_range(spec.ground.min_range..=spec.max_range);
            let mut world = pose.apply_point(&Vec3::new(r * az.cos(), r * az.sin(), 0.0));
            world.z = 0.0;
            placed += 1;
            if trajectories.iter().any(|t| inside_footprint(&t[n], &world, 0.05)) {
                continue;
            }
            points.push(to_sensor.apply_point(&world));
            intensity.push(GROUND_INTENSITY);
            if n + 1 < n_frames {
                forward.push(noisy(Vec3::zeros(), &mut rng));
            }
            if n > 0 {
                backward.push(noisy(Vec3::zeros(), &mut rng));
            }
        }

        frames.push(FrameRecord {
            index: n,
            timestamp: n as f64 / spec.frame_rate,
            cloud: PointCloud::with_intensity(points, intensity),
            pose,
            forward_flow: (n + 1 < n_frames).then(|| FlowField::new(forward, FlowDirection::Forward)),
            backward_flow: (spec.backward_flow && n > 0)
                .then(|| FlowField::new(backward, FlowDirection::Backward)),
            detections: Default::default(),
        });
        gt_frames.push(GtFrame {
            index: n,
            pose,
            objects: gt_objects,
        });
    }
    Ok((
        SequenceDataset {
            sequence_id: spec.sequence_id.clone(),
            frames,
            frame_rate: spec.frame_rate,
        },
        GroundTruth {
            sequence_id: spec.sequence_id.clone(),
            frame_rate: spec.frame_rate,
            frames: gt_frames,
        },
    ))
}
