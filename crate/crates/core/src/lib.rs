//! Pseudo-label generation for sequential LiDAR 3D detection.
//!
//! Raw multi-scale detections are fused per frame, linked over time by a
//! scene-flow driven tracker, and refined into labels. A synthetic scenario
//! generator and a range-binned evaluator live in [`simeval`].

pub mod assignment;
pub mod config;
pub mod fusion;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod refine;
pub mod scene;
pub mod simeval;
pub mod tracker;

pub use config::PipelineConfig;
pub use fusion::{Detection, DetectionSet, ObjectClass};
pub use geometry::{OrientedBox, RigidPose, Vec3};
pub use ingest::{load_sequence, write_sequence, SequenceDataset};
pub use pipeline::{label_sequence, LabelRun, PipelineError, SequenceSummary};
pub use refine::PseudoLabel;
pub use tracker::Track;
