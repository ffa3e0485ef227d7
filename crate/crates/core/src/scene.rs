//! World-frame view of a sequence, ready for tracking.
//!
//! Each frame is cropped to the FOV wedge in its sensor frame, ground points
//! are fitted there, and everything is then projected into the world. Flow is
//! only kept for non-ground points (`motion_cloud`); point counts use the full
//! cloud restricted to the upper part of each box so ground returns do not
//! count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{fuse_multiscale, DetectionSet, FusionConfig, FusionError};
use crate::geometry::{count_points_in_box, OrientedBox, RigidPose};
use crate::ingest::{
    crop_frame_fov, in_fov, remove_ground, to_world, FlowField, IngestError, Plane, PointCloud,
    RansacParams, SequenceDataset,
};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub fov_half_angle_deg: f64,
    pub ransac: RansacParams,
    /// Upper fraction of a box used for point counts.
    pub count_vertical_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            fov_half_angle_deg: 60.0,
            ransac: RansacParams::default(),
            count_vertical_fraction: 0.7,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg <= 180.0) {
            return Err("preprocess.fov_half_angle_deg must lie in (0, 180]".into());
        }
        if !(self.count_vertical_fraction > 0.0 && self.count_vertical_fraction <= 1.0) {
            return Err("preprocess.count_vertical_fraction must lie in (0, 1]".into());
        }
        self.ransac.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub index: usize,
    pub timestamp: f64,
    /// Sensor -> world at capture time.
    pub pose: RigidPose,
    /// Full FOV-cropped cloud, world frame.
    pub cloud: PointCloud,
    /// Non-ground points, world frame; flows below are aligned with it.
    pub motion_cloud: PointCloud,
    pub forward_flow: Option<FlowField>,
    pub backward_flow: Option<FlowField>,
    /// Fused, thresholded detections in world coordinates.
    pub detections: DetectionSet,
    pub ground_plane: Option<Plane>,
}

impl SceneFrame {
    /// Whether a world position lies inside this frame's sensor FOV wedge.
    pub fn sees(&self, world: &crate::geometry::Vec3, half_angle_deg: f64) -> bool {
        in_fov(&self.pose.inverse().apply_point(world), half_angle_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sequence_id: String,
    pub frame_rate: f64,
    pub fov_half_angle_deg: f64,
    pub count_vertical_fraction: f64,
    pub frames: Vec<SceneFrame>,
}

impl Scene {
    pub fn position_of(&self, frame_index: usize) -> Option<usize> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.index)
            .ok()
    }

    /// Points of frame `pos` in the upper part of `bx`.
    pub fn point_count(&self, pos: usize, bx: &OrientedBox) -> usize {
        count_points_in_box(bx, &self.frames[pos].cloud.points, self.count_vertical_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrepareStats {
    /// Detections over all scales before cropping and fusion.
    pub raw_detections: usize,
    pub fused_detections: usize,
    pub frames_without_ground: usize,
}

fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn prepare_scene(
    dataset: &SequenceDataset,
    preprocess: &PreprocessConfig,
    fusion: &FusionConfig,
    seed: u64,
) -> Result<(Scene, PrepareStats), SceneError> {
    dataset.validate()?;
    let mut stats = PrepareStats::default();
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for record in &dataset.frames {
        fusion.check_scales(record.index, &record.detections)?;
        stats.raw_detections += record.detections.values().map(DetectionSet::len).sum::<usize>();

        let cropped = crop_frame_fov(record, preprocess.fov_half_angle_deg);
        let (kept, ground_plane) = if cropped.cloud.len() >= 3 {
            let g = remove_ground(
                &cropped.cloud,
                &preprocess.ransac,
                frame_seed(seed, record.index),
            )?;
            (g.kept, g.plane)
        } else {
            ((0..cropped.cloud.len()).collect(), None)
        };
        if ground_plane.is_none() {
            stats.frames_without_ground += 1;
        }

        let world = to_world(&cropped);
        let mut detections = fuse_multiscale(
            record.index,
            &world.detections,
            fusion.score_threshold,
            fusion.nms_iou,
            fusion.class_aware,
        )?;
        for d in &mut detections.detections {
            d.point_count = count_points_in_box(
                &d.bbox,
                &world.cloud.points,
                preprocess.count_vertical_fraction,
            );
        }
        stats.fused_detections += detections.len();

        frames.push(SceneFrame {
            index: record.index,
            timestamp: record.timestamp,
            pose: record.pose,
            motion_cloud: world.cloud.select(&kept),
            forward_flow: world.forward_flow.as_ref().map(|f| f.select(&kept)),
            backward_flow: world.backward_flow.as_ref().map(|f| f.select(&kept)),
            cloud: world.cloud,
            detections,
            ground_plane,
        });
    }
    Ok((
        Scene {
            sequence_id: dataset.sequence_id.clone(),
            frame_rate: dataset.frame_rate,
            fov_half_angle_deg: preprocess.fov_half_angle_deg,
            count_vertical_fraction: preprocess.count_vertical_fraction,
            frames,
        },
        stats,
    ))
}
