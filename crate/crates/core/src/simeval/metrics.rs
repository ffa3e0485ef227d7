//! Precision, recall and range-binned average precision.
//!
//! Matching is greedy per frame and class: labels are visited by descending
//! score and each takes the unmatched ground-truth box of highest IoU at or
//! above the threshold. Ground truth is binned by horizontal distance to the
//! sensor at that frame; a true positive takes its match's bin, a false
//! positive its own.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fusion::ObjectClass;
use crate::geometry::{IouKind, OrientedBox, RigidPose};
use crate::refine::PseudoLabel;

use super::scenario::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBin {
    pub min: f64,
    pub max: f64,
}

impl RangeBin {
    pub fn contains(&self, distance: f64) -> bool {
        self.min <= distance && distance < self.max
    }

    pub fn name(&self) -> String {
        format!("{}-{}m", self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub vehicle_iou: Vec<f64>,
    pub pedestrian_iou: Vec<f64>,
    pub cyclist_iou: Vec<f64>,
    pub range_bins: Vec<RangeBin>,
    /// Recall sample count for AP: 101 (every 0.01 from 0) or 40 (every
    /// 1/40 from 1/40).
    pub ap_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vehicle_iou: vec![0.7, 0.5],
            pedestrian_iou: vec![0.5, 0.25],
            cyclist_iou: vec![0.5, 0.25],
            range_bins: vec![
                RangeBin { min: 0.0, max: 30.0 },
                RangeBin { min: 30.0, max: 50.0 },
                RangeBin { min: 50.0, max: 75.0 },
            ],
            ap_points: 101,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        for t in self.vehicle_iou.iter().chain(&self.pedestrian_iou).chain(&self.cyclist_iou) {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err("eval IoU thresholds must lie in (0, 1]".into());
            }
        }
        if self.range_bins.iter().any(|b| !(b.min >= 0.0 && b.min < b.max)) {
            return Err("eval.range_bins must satisfy 0 <= min < max".into());
        }
        if !matches!(self.ap_points, 40 | 101) {
            return Err("eval.ap_points must be 40 or 101".into());
        }
        Ok(())
    }

    pub fn thresholds(&self, class: ObjectClass) -> &[f64] {
        match class {
            ObjectClass::Vehicle => &self.vehicle_iou,
            ObjectClass::Pedestrian => &self.pedestrian_iou,
            ObjectClass::Cyclist => &self.cyclist_iou,
        }
    }
}

/// Match outcome of one frame's labels against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// Per label (input order): index of the matched ground-truth box.
    pub label_match: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

/// Greedy one-to-one matching by descending label score.
pub fn greedy_match(
    labels: &[(OrientedBox, f64)],
    gt: &[OrientedBox],
    iou_threshold: f64,
    kind: IouKind,
) -> FrameMatch {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].1.total_cmp(&labels[a].1));
    let mut label_match = vec![None; labels.len()];
    let mut gt_matched = vec![false; gt.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if gt_matched[j] {
                continue;
            }
            let iou = kind.iou(&labels[i].0, g);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            label_match[i] = Some(j);
        }
    }
    FrameMatch { label_match, gt_matched }
}

/// Interpolated AP from `(score, is_true_positive)` pairs. `None` without
/// ground truth.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, points: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, hit) in &sorted {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // Precision envelope: best precision at any recall >= r.
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let recall_points: Vec<f64> = match points {
        40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    };
    let sum: f64 = recall_points
        .iter()
        .map(|&r| {
            curve
                .iter()
                .find(|(rec, _)| *rec >= r - 1e-12)
                .map_or(0.0, |(_, p)| *p)
        })
        .sum();
    Some(sum / recall_points.len() as f64)
}

pub fn closed_gap(ap_adapted: f64, ap_source_only: f64, ap_fully_supervised: f64) -> Result<f64, String> {
    let span = ap_fully_supervised - ap_source_only;
    if span == 0.0 || !span.is_finite() || !ap_adapted.is_finite() {
        return Err("closed gap needs distinct, finite source-only and fully supervised AP".into());
    }
    Ok((ap_adapted - ap_source_only) / span * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrCounts {
    pub tp: usize,
    pub n_labels: usize,
    pub n_gt: usize,
}

impl PrCounts {
    /// 1 when there are no labels.
    pub fn precision(&self) -> f64 {
        if self.n_labels == 0 {
            1.0
        } else {
            self.tp as f64 / self.n_labels as f64
        }
    }

    pub fn recall(&self) -> Option<f64> {
        (self.n_gt > 0).then(|| self.tp as f64 / self.n_gt as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub class: ObjectClass,
    pub iou_threshold: f64,
    pub range: String,
    pub n_labels: usize,
    pub n_gt: usize,
    pub tp_bev: usize,
    pub precision_bev: f64,
    pub recall_bev: Option<f64>,
    pub ap_bev: Option<f64>,
    pub tp_3d: usize,
    pub precision_3d: f64,
    pub recall_3d: Option<f64>,
    pub ap_3d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence_id: String,
    pub ap_points: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn row(&self, class: ObjectClass, iou: f64, range: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && (r.iou_threshold - iou).abs() < 1e-12 && r.range == range)
    }

    /// Aligned text table, one line per class x threshold x range.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut out = String::new();
        writeln!(
            out,
            "{:<11} {:>5} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "class", "iou", "range", "labels", "gt", "P_bev", "R_bev", "AP_bev", "P_3d", "R_3d", "AP_3d"
        )
        .expect("write to string");
        for r in &self.rows {
            writeln!(
                out,
                "{:<11} {:>5.2} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
                r.class.as_str(),
                r.iou_threshold,
                r.range,
                r.n_labels,
                r.n_gt,
                fmt(Some(r.precision_bev)),
                fmt(r.recall_bev),
                fmt(r.ap_bev),
                fmt(Some(r.precision_3d)),
                fmt(r.recall_3d),
                fmt(r.ap_3d),
            )
            .expect("write to string");
        }
        out
    }
}

fn horizontal_distance(pose: &RigidPose, bx: &OrientedBox) -> f64 {
    (bx.center - pose.translation()).xy().norm()
}

/// Per-bin counts and scored outcomes for one class, threshold and IoU kind.
struct BinOutcome {
    counts: PrCounts,
    scored: Vec<(f64, bool)>,
}

fn evaluate_kind(
    labels: &[PseudoLabel],
    gt: &GroundTruth,
    class: ObjectClass,
    iou_threshold: f64,
    kind: IouKind,
    bins: &[Option<&RangeBin>],
) -> Vec<BinOutcome> {
    let mut out: Vec<BinOutcome> = bins
        .iter()
        .map(|_| BinOutcome {
            counts: PrCounts { tp: 0, n_labels: 0, n_gt: 0 },
            scored: Vec::new(),
        })
        .collect();
    let in_bin = |bin: &Option<&RangeBin>, d: f64| bin.is_none_or(|b| b.contains(d));
    for frame in &gt.frames {
        let frame_labels: Vec<(OrientedBox, f64)> = labels
            .iter()
            .filter(|l| l.frame == frame.index && l.class == class)
            .map(|l| (l.bbox, l.score))
            .collect();
        let frame_gt: Vec<OrientedBox> = frame
            .objects
            .iter()
            .filter(|o| o.class == class)
            .map(|o| o.bbox)
            .collect();
        let m = greedy_match(&frame_labels, &frame_gt, iou_threshold, kind);
        for (b, bin) in bins.iter().enumerate() {
            for g in &frame_gt {
                if in_bin(bin, horizontal_distance(&frame.pose, g)) {
                    out[b].counts.n_gt += 1;
                }
            }
            for ((bx, score), matched) in frame_labels.iter().zip(&m.label_match) {
                let reference = matched.map_or(bx, |j| &frame_gt[j]);
                if in_bin(bin, horizontal_distance(&frame.pose, reference)) {
                    out[b].counts.n_labels += 1;
                    out[b].counts.tp += matched.is_some() as usize;
                    out[b].scored.push((*score, matched.is_some()));
                }
            }
        }
    }
    out
}

/// Labels outside the ground truth's frames are ignored.
pub fn evaluate(labels: &[PseudoLabel], gt: &GroundTruth, cfg: &EvalConfig) -> MetricsReport {
    let bins: Vec<Option<&RangeBin>> = cfg.range_bins.iter().map(Some).chain([None]).collect();
    let mut rows = Vec::new();
    for class in ObjectClass::ALL {
        for &t in cfg.thresholds(class) {
            let bev = evaluate_kind(labels, gt, class, t, IouKind::Bev, &bins);
            let d3 = evaluate_kind(labels, gt, class, t, IouKind::ThreeD, &bins);
            for ((bin, b), d) in bins.iter().zip(bev).zip(d3) {
                rows.push(MetricsRow {
                    class,
                    iou_threshold: t,
                    range: bin.map_or_else(|| "all".to_string(), RangeBin::name),
                    n_labels: b.counts.n_labels,
                    n_gt: b.counts.n_gt,
                    tp_bev: b.counts.tp,
                    precision_bev: b.counts.precision(),
                    recall_bev: b.counts.recall(),
                    ap_bev: average_precision(&b.scored, b.counts.n_gt, cfg.ap_points),
                    tp_3d: d.counts.tp,
                    precision_3d: d.counts.precision(),
                    recall_3d: d.counts.recall(),
                    ap_3d: average_precision(&d.scored, d.counts.n_gt, cfg.ap_points),
                });
            }
        }
    }
    MetricsReport {
        sequence_id: gt.sequence_id.clone(),
        ap_points: cfg.ap_points,
        rows,
    }
}

/// Precision and recall over all classes at one threshold and IoU kind.
pub fn overall_pr(labels: &[PseudoLabel], gt: &GroundTruth, iou_threshold: f64, kind: IouKind) -> PrCounts {
    let mut total = PrCounts { tp: 0, n_labels: 0, n_gt: 0 };
    for class in ObjectClass::ALL {
        let all = evaluate_kind(labels, gt, class, iou_threshold, kind, &[None]);
        total.tp += all[0].counts.tp;
        total.n_labels += all[0].counts.n_labels;
        total.n_gt += all[0].counts.n_gt;
    }
    total
}
