//! End-to-end labeling of one sequence and the label file formats.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::ingest::{IngestError, SequenceDataset};
use crate::refine::{refine_all, LabelRecord, PseudoLabel, RefineStats};
use crate::scene::{prepare_scene, PrepareStats, Scene, SceneError};
use crate::tracker::{run_sequence, Track, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    LabelFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for problems with the inputs rather than broken internal state.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Self::Tracker(_))
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        Self::Scene(SceneError::Ingest(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub sequence_id: String,
    pub frames: usize,
    #[serde(flatten)]
    pub prepare: PrepareStats,
    pub tracks: usize,
    #[serde(flatten)]
    pub refine: RefineStats,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRun {
    pub scene: Scene,
    /// Tracker output before refinement.
    pub raw_tracks: Vec<Track>,
    /// Tracks that survived refinement.
    pub tracks: Vec<Track>,
    pub labels: Vec<PseudoLabel>,
    pub summary: SequenceSummary,
}

pub fn label_sequence(
    dataset: &SequenceDataset,
    cfg: &PipelineConfig,
) -> Result<LabelRun, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let tracker_cfg = cfg.tracker_config();
    let (scene, prepare) = prepare_scene(dataset, &cfg.preprocess, &cfg.fusion, cfg.seed)?;
    let raw_tracks = run_sequence(&scene, &tracker_cfg)?;
    let refined = refine_all(raw_tracks.clone(), &scene, &cfg.refine, &tracker_cfg)?;
    let summary = SequenceSummary {
        sequence_id: dataset.sequence_id.clone(),
        frames: dataset.frames.len(),
        prepare,
        tracks: raw_tracks.len(),
        refine: refined.stats,
        labels: refined.labels.len(),
    };
    Ok(LabelRun {
        scene,
        raw_tracks,
        tracks: refined.tracks,
        labels: refined.labels,
        summary,
    })
}

/// Fused detections in label form, for comparing against refined labels.
pub fn fused_detection_labels(scene: &Scene) -> Vec<PseudoLabel> {
    scene
        .frames
        .iter()
        .flat_map(|f| {
            f.detections.detections.iter().enumerate().map(|(i, d)| PseudoLabel {
                frame: f.index,
                class: d.class,
                bbox: d.bbox,
                track_id: i as u64,
                score: d.score,
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[PseudoLabel]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        let line = serde_json::to_string(&LabelRecord::from(l)).expect("serializable");
        writeln!(w, "{line}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<PseudoLabel>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| PipelineError::LabelFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        out.push(rec.to_label().map_err(bad)?);
    }
    Ok(out)
}

/// One `{frame:06}.txt` per listed frame with rows
/// `class l w h cx cy cz heading score`; frames without labels get an empty
/// file.
pub fn write_label_txt(
    dir: &Path,
    frames: impl IntoIterator<Item = usize>,
    labels: &[PseudoLabel],
) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    for frame in frames {
        let path = dir.join(format!("{frame:06}.txt"));
        let mut text = String::new();
        for l in labels.iter().filter(|l| l.frame == frame) {
            let b = &l.bbox;
            text.push_str(&format!(
                "{} {} {} {} {} {} {} {} {}\n",
                l.class, b.dims.x, b.dims.y, b.dims.z, b.center.x, b.center.y, b.center.z, b.heading, l.score
            ));
        }
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::ObjectClass;
    use crate::simeval::{simulate, ScenarioSpec};

    fn small() -> SequenceDataset {
        let spec = ScenarioSpec {
            duration: 30,
            ..ScenarioSpec::mixed_traffic()
        };
        simulate(&spec, 5).unwrap().dataset
    }

    #[test]
    fn labels_a_simulated_sequence() {
        let run = label_sequence(&small(), &PipelineConfig::default()).unwrap();
        assert!(!run.labels.is_empty());
        assert_eq!(run.summary.labels, run.labels.len());
        let total: usize = run.tracks.iter().map(Track::len).sum();
        assert_eq!(total, run.labels.len());
        assert!(run.summary.prepare.fused_detections <= run.summary.prepare.raw_detections);
    }

    #[test]
    fn higher_threshold_fuses_fewer() {
        let ds = small();
        let base = label_sequence(&ds, &PipelineConfig::default()).unwrap();
        let strict = PipelineConfig::from_toml_str("[fusion]\nscore_threshold = 0.9\n").unwrap();
        let strict = label_sequence(&ds, &strict).unwrap();
        assert!(strict.summary.prepare.fused_detections < base.summary.prepare.fused_detections);
    }

    #[test]
    fn label_file_round_trip() {
        let run = label_sequence(&small(), &PipelineConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels(&path, &run.labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), run.labels);
    }

    #[test]
    fn malformed_label_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        fs::write(&path, "{\"frame\": 0}\n").unwrap();
        let err = read_labels(&path).unwrap_err();
        assert!(matches!(err, PipelineError::LabelFile { line: 1, .. }));
    }

    #[test]
    fn txt_export_rows() {
        let dir = tempfile::tempdir().unwrap();
        let label = PseudoLabel {
            frame: 1,
            class: ObjectClass::Vehicle,
            bbox: crate::geometry::OrientedBox::new(
                crate::geometry::Vec3::new(1.0, 2.0, 0.5),
                crate::geometry::Vec3::new(4.0, 2.0, 1.5),
                0.25,
            )
            .unwrap(),
            track_id: 3,
            score: 0.75,
        };
        write_label_txt(dir.path(), 0..3, &[label]).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("000000.txt")).unwrap(), "");
        assert_eq!(
            fs::read_to_string(dir.path().join("000001.txt")).unwrap(),
            "vehicle 4 2 1.5 1 2 0.5 0.25 0.75\n"
        );
    }
}
