//! Track refinement and label export.
//!
//! Order: filter -> dimension correction -> static-vehicle correction ->
//! flow-consistency recovery of removed tracks -> backward completion.

use serde::{Deserialize, Serialize};

use crate::fusion::ObjectClass;
use crate::geometry::{
    circular_mean, count_points_in_box, iou_bev, points_in_box, OrientedBox, Vec3,
};
use crate::scene::Scene;
use crate::tracker::{
    flow_is_consistent, mean_box_flow, StateSource, Track, TrackState, TrackerConfig,
    TrackerError,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub min_hit_ratio: f64,
    pub min_track_length_s: f64,
    /// A track is kept only if some detection holds more points than this.
    pub min_max_points: usize,
    pub recovery_min_iou: f64,
    pub backward_vertical_fraction: f64,
    pub top_k_dims: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            min_hit_ratio: 0.3,
            min_track_length_s: 0.5,
            min_max_points: 15,
            recovery_min_iou: 0.3,
            backward_vertical_fraction: 0.7,
            top_k_dims: 3,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ratios = [
            ("min_hit_ratio", self.min_hit_ratio),
            ("recovery_min_iou", self.recovery_min_iou),
            ("backward_vertical_fraction", self.backward_vertical_fraction),
        ];
        for (name, v) in ratios {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("refine.{name} must lie in (0, 1]"));
            }
        }
        if !(self.min_track_length_s.is_finite() && self.min_track_length_s > 0.0) {
            return Err("refine.min_track_length_s must be positive".into());
        }
        if self.min_max_points == 0 || self.top_k_dims == 0 {
            return Err("refine.min_max_points and refine.top_k_dims must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub frame: usize,
    pub class: ObjectClass,
    pub bbox: OrientedBox,
    pub track_id: u64,
    pub score: f64,
}

/// Flat JSON-lines form of a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub frame: usize,
    pub class: ObjectClass,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub heading: f64,
    pub score: f64,
    pub track_id: u64,
}

impl From<&PseudoLabel> for LabelRecord {
    fn from(p: &PseudoLabel) -> Self {
        let b = &p.bbox;
        Self {
            frame: p.frame,
            class: p.class,
            cx: b.center.x,
            cy: b.center.y,
            cz: b.center.z,
            l: b.dims.x,
            w: b.dims.y,
            h: b.dims.z,
            heading: b.heading,
            score: p.score,
            track_id: p.track_id,
        }
    }
}

impl LabelRecord {
    pub fn to_label(&self) -> Result<PseudoLabel, String> {
        let bbox = OrientedBox::new(
            Vec3::new(self.cx, self.cy, self.cz),
            Vec3::new(self.l, self.w, self.h),
            self.heading,
        )
        .map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        Ok(PseudoLabel {
            frame: self.frame,
            class: self.class,
            bbox,
            track_id: self.track_id,
            score: self.score,
        })
    }
}

pub fn hit_ratio(track: &Track) -> f64 {
    if track.is_empty() {
        return 0.0;
    }
    track.assigned_detection_count as f64 / track.len() as f64
}

fn max_detection_points(track: &Track) -> usize {
    track.detections().map(|d| d.point_count).max().unwrap_or(0)
}

fn long_enough(track: &Track, cfg: &RefineConfig, frame_rate: f64) -> bool {
    track.len() as f64 / frame_rate >= cfg.min_track_length_s - 1e-9
}

pub fn passes_filter(track: &Track, cfg: &RefineConfig, frame_rate: f64) -> bool {
    hit_ratio(track) >= cfg.min_hit_ratio
        && long_enough(track, cfg, frame_rate)
        && max_detection_points(track) > cfg.min_max_points
}

/// Splits tracks into `(kept, removed)`, preserving input order.
pub fn filter_tracks(
    tracks: Vec<Track>,
    cfg: &RefineConfig,
    frame_rate: f64,
) -> (Vec<Track>, Vec<Track>) {
    tracks
        .into_iter()
        .partition(|t| passes_filter(t, cfg, frame_rate))
}

/// Applies the mean dims of the `top_k` best-populated detections to every
/// state. Ties go to the earlier frame.
pub fn correct_dimensions(track: &mut Track, top_k: usize) {
    let mut dets: Vec<_> = track.detections().collect();
    if dets.is_empty() {
        return;
    }
    dets.sort_by(|a, b| b.point_count.cmp(&a.point_count).then(a.frame.cmp(&b.frame)));
    let k = top_k.min(dets.len());
    let dims = dets[..k].iter().map(|d| d.bbox.dims).sum::<Vec3>() / k as f64;
    for s in &mut track.states {
        s.bbox.dims = dims;
    }
}

/// Parked vehicles get one pose: mean center and circular-mean heading of
/// their detections. Returns whether the track was changed.
pub fn correct_static(track: &mut Track, tracker: &TrackerConfig) -> bool {
    if track.class != ObjectClass::Vehicle || track.was_ever_moving(tracker) {
        return false;
    }
    let dets: Vec<_> = track.detections().collect();
    if dets.is_empty() {
        return false;
    }
    let center = dets.iter().map(|d| d.bbox.center).sum::<Vec3>() / dets.len() as f64;
    let heading = circular_mean(dets.iter().map(|d| (d.bbox.heading, 1.0)))
        .unwrap_or(dets[0].bbox.heading);
    for s in &mut track.states {
        s.bbox.center = center;
        s.bbox.heading = heading;
    }
    true
}

/// Whether every pair of the track's detection boxes is disjoint in BEV.
pub fn detections_disjoint(track: &Track) -> bool {
    let boxes: Vec<_> = track.detections().map(|d| d.bbox).collect();
    boxes.len() >= 2
        && boxes
            .iter()
            .enumerate()
            .all(|(i, a)| boxes[i + 1..].iter().all(|b| iou_bev(a, b) == 0.0))
}

/// Carries the first detection forward with gated mean flow alone and checks
/// it against every later detection.
pub fn flow_consistent(
    track: &Track,
    scene: &Scene,
    cfg: &RefineConfig,
    tracker: &TrackerConfig,
) -> Result<bool, TrackerError> {
    let mut dets = track.detections();
    let Some(first) = dets.next() else {
        return Ok(false);
    };
    let later: Vec<_> = dets.collect();
    let Some(last) = later.last() else {
        return Ok(false);
    };
    let (Some(mut pos), Some(end)) = (scene.position_of(first.frame), scene.position_of(last.frame))
    else {
        return Ok(false);
    };
    let mut bx = first.bbox;
    let mut previous: Option<Vec3> = None;
    let mut next = later.iter().peekable();
    while pos < end {
        let frame = &scene.frames[pos];
        let candidate = match &frame.forward_flow {
            Some(flow) => mean_box_flow(&bx, &frame.motion_cloud, flow)?,
            None => None,
        };
        let flow = match (previous, candidate) {
            (Some(p), Some(c)) if !flow_is_consistent(&p, &c, tracker) => Some(p),
            (p, c) => c.or(p),
        };
        if let Some(f) = flow {
            bx = bx.translated(&f);
            previous = Some(f);
        }
        pos += 1;
        let index = scene.frames[pos].index;
        while let Some(d) = next.next_if(|d| d.frame == index) {
            if iou_bev(&bx, &d.bbox) < cfg.recovery_min_iou {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Returns the removed tracks that recovery brings back.
pub fn recover_by_flow(
    removed: &[Track],
    scene: &Scene,
    cfg: &RefineConfig,
    tracker: &TrackerConfig,
) -> Result<Vec<Track>, TrackerError> {
    let mut out = Vec::new();
    for t in removed {
        if max_detection_points(t) > cfg.min_max_points
            && detections_disjoint(t)
            && flow_consistent(t, scene, cfg, tracker)?
        {
            out.push(t.clone());
        }
    }
    Ok(out)
}

/// Mean motion of `bx` from frame `pos` back to `pos - 1`: the backward flow
/// of `pos` when present, otherwise the negated forward flow of `pos - 1`
/// over points that land inside `bx`.
fn backward_flow(scene: &Scene, pos: usize, bx: &OrientedBox) -> Result<Option<Vec3>, TrackerError> {
    let frame = &scene.frames[pos];
    if let Some(flow) = &frame.backward_flow {
        return mean_box_flow(bx, &frame.motion_cloud, flow);
    }
    let earlier = &scene.frames[pos - 1];
    let Some(flow) = &earlier.forward_flow else {
        return Ok(None);
    };
    if flow.len() != earlier.motion_cloud.len() {
        return Err(TrackerError::MisalignedFlow {
            frame: earlier.index,
            cloud: earlier.motion_cloud.len(),
            flow: flow.len(),
        });
    }
    let moved: Vec<Vec3> = earlier
        .motion_cloud
        .points
        .iter()
        .zip(&flow.vectors)
        .map(|(p, v)| p + v)
        .collect();
    let inside = points_in_box(bx, &moved, 1.0);
    if inside.is_empty() {
        return Ok(None);
    }
    let sum: Vec3 = inside.iter().map(|&i| flow.vectors[i]).sum();
    Ok(Some(-sum / inside.len() as f64))
}

/// Extends the track into earlier frames by following backward flow.
/// Returns the number of states added.
pub fn backward_complete(
    track: &mut Track,
    scene: &Scene,
    cfg: &RefineConfig,
    tracker: &TrackerConfig,
) -> Result<usize, TrackerError> {
    let Some(mut pos) = scene.position_of(track.first_frame()) else {
        return Ok(0);
    };
    let mut bx = track.states[0].bbox;
    let mut previous = track.states[0].mean_flow;
    let mut added = Vec::new();
    while pos > 0 {
        let Some(back) = backward_flow(scene, pos, &bx)? else {
            break;
        };
        let forward = -back;
        if previous.is_some_and(|p| !flow_is_consistent(&p, &forward, tracker)) {
            break;
        }
        let candidate = bx.translated(&back);
        let earlier = &scene.frames[pos - 1];
        let count = count_points_in_box(
            &candidate,
            &earlier.cloud.points,
            cfg.backward_vertical_fraction,
        );
        if count == 0 {
            break;
        }
        added.push(TrackState {
            frame: earlier.index,
            bbox: candidate,
            source: StateSource::BackwardExtrapolated,
            mean_flow: Some(forward),
            point_count: count,
            detection: None,
        });
        bx = candidate;
        previous = Some(forward);
        pos -= 1;
    }
    let n = added.len();
    added.reverse();
    track.states.splice(0..0, added);
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefineStats {
    pub input_tracks: usize,
    pub kept: usize,
    pub removed: usize,
    pub recovered: usize,
    pub static_corrected: usize,
    pub backward_states: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    /// Surviving tracks ordered by id.
    pub tracks: Vec<Track>,
    /// One label per state, ordered by `(frame, track_id)`.
    pub labels: Vec<PseudoLabel>,
    pub stats: RefineStats,
}

pub fn refine_all(
    tracks: Vec<Track>,
    scene: &Scene,
    cfg: &RefineConfig,
    tracker: &TrackerConfig,
) -> Result<RefineOutput, TrackerError> {
    let mut stats = RefineStats {
        input_tracks: tracks.len(),
        ..Default::default()
    };
    let (mut kept, removed) = filter_tracks(tracks, cfg, tracker.frame_rate);
    stats.kept = kept.len();
    stats.removed = removed.len();
    for t in &mut kept {
        correct_dimensions(t, cfg.top_k_dims);
        if correct_static(t, tracker) {
            stats.static_corrected += 1;
        }
    }
    let mut recovered = recover_by_flow(&removed, scene, cfg, tracker)?;
    stats.recovered = recovered.len();
    for t in &mut recovered {
        correct_dimensions(t, cfg.top_k_dims);
    }
    kept.extend(recovered);
    for t in &mut kept {
        stats.backward_states += backward_complete(t, scene, cfg, tracker)?;
    }
    kept.sort_by_key(|t| t.id);
    let labels = labels_from_tracks(&kept);
    Ok(RefineOutput {
        tracks: kept,
        labels,
        stats,
    })
}

/// Every state of every track, scored with the track's final confidence.
pub fn labels_from_tracks(tracks: &[Track]) -> Vec<PseudoLabel> {
    let mut labels: Vec<PseudoLabel> = tracks
        .iter()
        .flat_map(|t| {
            t.states.iter().map(|s| PseudoLabel {
                frame: s.frame,
                class: t.class,
                bbox: s.bbox,
                track_id: t.id,
                score: t.confidence,
            })
        })
        .collect();
    labels.sort_by_key(|l| (l.frame, l.track_id));
    labels
}
