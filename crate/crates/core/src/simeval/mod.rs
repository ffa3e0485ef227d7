//! Synthetic scenes with exact ground truth, and the evaluation metrics used
//! to score labels against them.

mod detections;
mod metrics;
mod scenario;

use std::path::Path;

use thiserror::Error;

use crate::ingest::SequenceDataset;

pub use detections::{simulate_detections, typical_dims, DetectionStats};
pub use metrics::{
    average_precision, closed_gap, evaluate, greedy_match, overall_pr, EvalConfig, FrameMatch,
    MetricsReport, MetricsRow, PrCounts, RangeBin,
};
pub use scenario::{
    generate_scenario, EgoSpec, GroundSpec, GroundTruth, GtFrame, GtObject, NoiseSpec,
    ObjectSpec, ScenarioSpec, ScoreModel, Segment,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSequence {
    pub dataset: SequenceDataset,
    pub ground_truth: GroundTruth,
    pub stats: DetectionStats,
}

/// Scene generation followed by detection simulation, with detections
/// attached to the dataset's frames.
pub fn simulate(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedSequence, SimError> {
    let (mut dataset, ground_truth) = generate_scenario(spec, seed)?;
    let (dets, stats) = simulate_detections(&ground_truth, spec, seed)?;
    for (frame, per_scale) in dataset.frames.iter_mut().zip(dets) {
        frame.detections = per_scale;
    }
    Ok(SimulatedSequence {
        dataset,
        ground_truth,
        stats,
    })
}

pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(gt).map_err(|source| SimError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, SimError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SimError::Json {
        path: path.to_path_buf(),
        source,
    })
}
