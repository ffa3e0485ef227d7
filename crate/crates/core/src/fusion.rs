//! Multi-scale detection fusion: map each scale's boxes back to metric
//! space, pool them, suppress duplicates and keep the confident ones.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_bev, scale_box, GeometryError, OrientedBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(ObjectClass::Vehicle),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

/// A scored box at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub class: ObjectClass,
    pub bbox: OrientedBox,
    pub score: f64,
    /// Cloud points inside the box (upper part only, see `PipelineConfig`).
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub frame: usize,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(frame: usize) -> Self {
        Self {
            frame,
            detections: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frame {frame}: detections at scale {scale} but only {configured:?} are configured")]
    UnexpectedScale {
        frame: usize,
        scale: f64,
        configured: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Input scales the detector was run at.
    pub scales: Vec<f64>,
    /// Fused detections below this confidence are dropped.
    pub score_threshold: f64,
    /// BEV IoU at or above which the lower-scored box is suppressed.
    pub nms_iou: f64,
    pub class_aware: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.8, 1.0, 1.2],
            score_threshold: 0.8,
            nms_iou: 0.1,
            class_aware: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err("fusion.scales must be a non-empty list of positive numbers".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err("fusion.score_threshold must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err("fusion.nms_iou must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Rejects scales the config does not list.
    pub fn check_scales(
        &self,
        frame: usize,
        per_scale: &BTreeMap<OrderedFloat<f64>, DetectionSet>,
    ) -> Result<(), FusionError> {
        for scale in per_scale.keys() {
            if !self.scales.iter().any(|s| (s - scale.0).abs() < 1e-9) {
                return Err(FusionError::UnexpectedScale {
                    frame,
                    scale: scale.0,
                    configured: self.scales.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Maps detections made on a cloud scaled by `scale` back to metric space.
pub fn rescale_detections(set: &DetectionSet, scale: f64) -> Result<DetectionSet, FusionError> {
    let inv = 1.0 / scale;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GeometryError::InvalidScale(scale).into());
    }
    let detections = set
        .detections
        .iter()
        .map(|d| {
            Ok(Detection {
                bbox: scale_box(&d.bbox, inv)?,
                ..d.clone()
            })
        })
        .collect::<Result<_, GeometryError>>()?;
    Ok(DetectionSet {
        frame: set.frame,
        detections,
    })
}

/// Greedy non-maximum suppression on BEV IoU.
///
/// Boxes are visited by descending score (ties keep input order). A box is
/// suppressed by an already kept box when their IoU is positive and at least
/// `iou_threshold`; with `class_aware`, only same-class boxes interact.
/// The output is in visiting order.
pub fn nms(set: &DetectionSet, iou_threshold: f64, class_aware: bool) -> DetectionSet {
    let mut order: Vec<usize> = (0..set.detections.len()).collect();
    order.sort_by(|&a, &b| {
        set.detections[b]
            .score
            .total_cmp(&set.detections[a].score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<&Detection> = Vec::new();
    for i in order {
        let cand = &set.detections[i];
        let suppressed = kept.iter().any(|k| {
            (!class_aware || k.class == cand.class) && {
                let iou = iou_bev(&k.bbox, &cand.bbox);
                iou > 0.0 && iou >= iou_threshold
            }
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    DetectionSet {
        frame: set.frame,
        detections: kept.into_iter().cloned().collect(),
    }
}

/// Rescales every scale's detections, pools them in ascending scale order,
/// runs NMS and then drops scores below `score_threshold`.
pub fn fuse_multiscale(
    frame: usize,
    per_scale: &BTreeMap<OrderedFloat<f64>, DetectionSet>,
    score_threshold: f64,
    nms_iou: f64,
    class_aware: bool,
) -> Result<DetectionSet, FusionError> {
    let mut pooled = DetectionSet::new(frame);
    for (scale, set) in per_scale {
        pooled
            .detections
            .extend(rescale_detections(set, scale.0)?.detections);
    }
    let mut fused = nms(&pooled, nms_iou, class_aware);
    fused.detections.retain(|d| d.score >= score_threshold);
    Ok(fused)
}
