//! Noisy detector outputs derived from ground truth.

use ordered_float::OrderedFloat;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::fusion::{Detection, DetectionSet, ObjectClass};
use crate::geometry::{scale_box, transform_box, OrientedBox, Vec3};
use crate::ingest::ScaledDetections;

use super::scenario::{normal, stream_rng, GroundTruth, ScenarioSpec};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionStats {
    /// Visible ground-truth objects over all frames.
    pub frame_objects: usize,
    pub dropped: usize,
    pub clutter: usize,
}

/// Typical (l, w, h) for false positives of each class.
pub fn typical_dims(class: ObjectClass) -> Vec3 {
    match class {
        ObjectClass::Vehicle => Vec3::new(4.5, 1.9, 1.6),
        ObjectClass::Pedestrian => Vec3::new(0.8, 0.7, 1.8),
        ObjectClass::Cyclist => Vec3::new(1.8, 0.7, 1.7),
    }
}

/// Per frame, drops or perturbs every visible object in its sensor frame,
/// adds Poisson clutter, and emits one copy per scale. Returned sets are in
/// sensor coordinates, scaled as the detector would report them.
pub fn simulate_detections(
    gt: &GroundTruth,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<(Vec<ScaledDetections>, DetectionStats), SimError> {
    spec.validate()?;
    let noise = &spec.noise;
    let (center_n, dim_n, heading_n) = (
        normal(noise.center_sigma),
        normal(noise.dim_sigma),
        normal(noise.heading_sigma),
    );
    let clutter = (noise.clutter_rate > 0.0)
        .then(|| Poisson::new(noise.clutter_rate).expect("validated rate"));
    let half_angle = spec.fov_half_angle_deg.to_radians();
    let mut stats = DetectionStats::default();
    let mut out = Vec::with_capacity(gt.frames.len());

    for frame in &gt.frames {
        let mut rng = stream_rng(seed, 3, frame.index as u64);
        let to_sensor = frame.pose.inverse();
        let mut boxes: Vec<(ObjectClass, OrientedBox, f64)> = Vec::new();
        for obj in &frame.objects {
            stats.frame_objects += 1;
            if rng.random::<f64>() < noise.dropout {
                stats.dropped += 1;
                continue;
            }
            let mut bx = transform_box(&to_sensor, &obj.bbox);
            bx.center += Vec3::new(
                center_n.sample(&mut rng),
                center_n.sample(&mut rng),
                center_n.sample(&mut rng),
            );
            for k in 0..3 {
                bx.dims[k] = (bx.dims[k] + dim_n.sample(&mut rng)).max(0.1);
            }
            bx.heading = crate::geometry::normalize_angle(bx.heading + heading_n.sample(&mut rng));
            let score = noise.score.sample(obj.point_count, &mut rng);
            boxes.push((obj.class, bx, score));
        }

        let n_clutter = clutter.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_clutter {
            let class = ObjectClass::ALL[rng.random_range(0..ObjectClass::ALL.len())];
            let dims = typical_dims(class);
            let az = rng.random_range(-half_angle..=half_angle);
            let r = rng.random_range(5.0..=spec.max_range);
            let mut world = frame.pose.apply_point(&Vec3::new(r * az.cos(), r * az.sin(), 0.0));
            world.z = dims.z / 2.0;
            let bx = OrientedBox {
                center: to_sensor.apply_point(&world),
                dims,
                heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            };
            let score = rng.random_range(noise.clutter_score[0]..=noise.clutter_score[1]);
            boxes.push((class, bx, score));
            stats.clutter += 1;
        }

        let mut per_scale = ScaledDetections::new();
        for &s in &spec.scales {
            let detections = boxes
                .iter()
                .map(|(class, bx, score)| {
                    Ok(Detection {
                        frame: frame.index,
                        class: *class,
                        bbox: scale_box(bx, s)?,
                        score: *score,
                        point_count: 0,
                    })
                })
                .collect::<Result<Vec<_>, crate::geometry::GeometryError>>()
                .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
            per_scale.insert(
                OrderedFloat(s),
                DetectionSet {
                    frame: frame.index,
                    detections,
                },
            );
        }
        out.push(per_scale);
    }
    Ok((out, stats))
}
