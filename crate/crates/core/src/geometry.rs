//! Oriented 3D boxes, rigid poses and rotated-rectangle overlap.
//!
//! Conventions used everywhere in the crate: z points up, a box heading is a
//! rotation about +z measured from +x and is kept in (-pi, pi], and box dims
//! are `(length, width, height)` with length along the heading direction.
//! Boxes are closed sets, so boundary points count as inside.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PointCloud;

pub type Vec3 = Vector3<f64>;
type Vec2 = Vector2<f64>;

/// Intersections smaller than this (m^2) are treated as empty.
pub const AREA_EPS: f64 = 1e-9;
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box dimensions must be finite and positive, got ({0}, {1}, {2})")]
    InvalidDims(f64, f64, f64),
    #[error("box center must be finite")]
    NonFiniteCenter,
    #[error("box heading must be finite")]
    NonFiniteHeading,
    #[error("scale factor must be finite and positive, got {0}")]
    InvalidScale(f64),
    #[error("rotation is not proper orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("pose translation must be finite")]
    NonFiniteTranslation,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Smallest absolute difference between two angles on the circle, in [0, pi].
pub fn angular_difference(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Weighted circular mean of angles. Returns `None` when the weighted unit
/// vectors cancel out.
pub fn circular_mean<I>(weighted: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut s, mut c) = (0.0, 0.0);
    for (angle, weight) in weighted {
        s += weight * angle.sin();
        c += weight * angle.cos();
    }
    if s.hypot(c) < 1e-12 {
        None
    } else {
        Some(normalize_angle(s.atan2(c)))
    }
}

/// A 7-DoF box: center, `(l, w, h)` dims and heading about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub dims: Vec3,
    pub heading: f64,
}

impl OrientedBox {
    pub fn new(center: Vec3, dims: Vec3, heading: f64) -> Result<Self, GeometryError> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteCenter);
        }
        if !dims.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(GeometryError::InvalidDims(dims.x, dims.y, dims.z));
        }
        if !heading.is_finite() {
            return Err(GeometryError::NonFiniteHeading);
        }
        Ok(Self {
            center,
            dims,
            heading: normalize_angle(heading),
        })
    }

    pub fn length(&self) -> f64 {
        self.dims.x
    }

    pub fn width(&self) -> f64 {
        self.dims.y
    }

    pub fn height(&self) -> f64 {
        self.dims.z
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn bev_area(&self) -> f64 {
        self.dims.x * self.dims.y
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - 0.5 * self.dims.z
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + 0.5 * self.dims.z
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.center, self.dims, self.heading).is_ok()
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self {
            center: self.center + offset,
            ..*self
        }
    }

    /// Expresses a world point in box-local coordinates (origin at the center,
    /// x along the heading).
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let (s, c) = self.heading.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Closed containment test. Only the top `vertical_fraction` of the box
    /// height counts, so 1.0 is the whole box.
    pub fn contains(&self, p: &Vec3, vertical_fraction: f64) -> bool {
        let local = self.to_local(p);
        let half = 0.5 * self.dims;
        local.x.abs() <= half.x
            && local.y.abs() <= half.y
            && local.z <= half.z
            && local.z >= half.z - vertical_fraction * self.dims.z
    }

    /// Footprint corners, counter-clockwise starting at (+l/2, +w/2).
    pub fn bev_corners(&self) -> [Vec2; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (0.5 * self.dims.x, 0.5 * self.dims.y);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
            Vec2::new(
                self.center.x + c * x - s * y,
                self.center.y + s * x + c * y,
            )
        })
    }

    fn bev_radius(&self) -> f64 {
        0.5 * self.dims.x.hypot(self.dims.y)
    }
}

/// The eight corners of a box. Indices 0..4 are the bottom face and 4..8 the
/// top face; each face runs counter-clockwise (seen from above) starting at
/// local (+l/2, +w/2).
pub fn box_corners(bx: &OrientedBox) -> [Vec3; 8] {
    let bev = bx.bev_corners();
    let (lo, hi) = (bx.z_min(), bx.z_max());
    std::array::from_fn(|i| {
        let c = bev[i % 4];
        Vec3::new(c.x, c.y, if i < 4 { lo } else { hi })
    })
}

/// Indices of the points inside `bx`, restricted vertically to the top
/// `vertical_fraction` of the box.
///
/// Panics if `vertical_fraction` is outside (0, 1].
pub fn points_in_box(bx: &OrientedBox, points: &[Vec3], vertical_fraction: f64) -> Vec<usize> {
    assert!(
        vertical_fraction > 0.0 && vertical_fraction <= 1.0,
        "vertical fraction must lie in (0, 1], got {vertical_fraction}"
    );
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| bx.contains(p, vertical_fraction))
        .map(|(i, _)| i)
        .collect()
}

/// Like [`points_in_box`] but only counts.
pub fn count_points_in_box(bx: &OrientedBox, points: &[Vec3], vertical_fraction: f64) -> usize {
    assert!(vertical_fraction > 0.0 && vertical_fraction <= 1.0);
    points
        .iter()
        .filter(|p| bx.contains(p, vertical_fraction))
        .count()
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = poly
        .iter()
        .zip(poly.iter().cycle().skip(1))
        .map(|(a, b)| cross(a, b))
        .sum();
    0.5 * twice.abs()
}

/// Sutherland-Hodgman clipping of `subject` by a convex counter-clockwise
/// polygon `clip`.
fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output = subject.to_vec();
    for (i, a) in clip.iter().enumerate() {
        if output.is_empty() {
            break;
        }
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let side = |p: &Vec2| cross(&edge, &(p - a));
        let input = std::mem::take(&mut output);
        for (j, cur) in input.iter().enumerate() {
            let prev = input[(j + input.len() - 1) % input.len()];
            let (d_cur, d_prev) = (side(cur), side(&prev));
            if d_cur >= 0.0 {
                if d_prev < 0.0 {
                    output.push(prev + (cur - prev) * (d_prev / (d_prev - d_cur)));
                }
                output.push(*cur);
            } else if d_prev >= 0.0 {
                output.push(prev + (cur - prev) * (d_prev / (d_prev - d_cur)));
            }
        }
    }
    output
}

/// Area of the intersection of the two box footprints.
pub fn bev_intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let dx = a.center.x - b.center.x;
    let dy = a.center.y - b.center.y;
    if dx.hypot(dy) > a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

fn vertical_overlap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0)
}

/// Bird's-eye-view IoU of the rotated footprints.
pub fn iou_bev(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times vertical overlap.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let overlap = vertical_overlap(a, b);
    if overlap <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which overlap measure a caller wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &OrientedBox, b: &OrientedBox) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

/// A proper rigid transform, usually sensor -> world.
///
/// Serialized as the 12 row-major floats of `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotOrthonormal(f64::INFINITY));
        }
        let deviation = (rotation * rotation.transpose() - Matrix3::identity())
            .abs()
            .max()
            .max((rotation.determinant() - 1.0).abs());
        if deviation > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal(deviation));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about +z followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 12 {
            return Err(GeometryError::NotOrthonormal(f64::NAN));
        }
        let r = |row: usize, col: usize| values[row * 4 + col];
        let rotation = Matrix3::new(
            r(0, 0),
            r(0, 1),
            r(0, 2),
            r(1, 0),
            r(1, 1),
            r(1, 2),
            r(2, 0),
            r(2, 1),
            r(2, 2),
        );
        Self::new(rotation, Vec3::new(r(0, 3), r(1, 3), r(2, 3)))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for row in 0..3 {
            for col in 0..3 {
                out[row * 4 + col] = self.rotation[(row, col)];
            }
            out[row * 4 + 3] = self.translation[row];
        }
        out
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Heading of the rotated x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotates a free vector (flow, velocity); translation does not apply.
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }
}

impl TryFrom<Vec<f64>> for RigidPose {
    type Error = GeometryError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_row_major(&values)
    }
}

impl From<RigidPose> for Vec<f64> {
    fn from(pose: RigidPose) -> Self {
        pose.to_row_major().to_vec()
    }
}

/// Moves a box rigidly. Heading advances by the pose yaw; the box is assumed
/// to stay upright.
pub fn transform_box(pose: &RigidPose, bx: &OrientedBox) -> OrientedBox {
    OrientedBox {
        center: pose.apply_point(&bx.center),
        dims: bx.dims,
        heading: normalize_angle(bx.heading + pose.yaw()),
    }
}

pub fn transform_cloud(pose: &RigidPose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.apply_point(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

fn check_scale(s: f64) -> Result<(), GeometryError> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidScale(s))
    }
}

/// Uniform scaling about the sensor origin.
pub fn scale_box(bx: &OrientedBox, s: f64) -> Result<OrientedBox, GeometryError> {
    check_scale(s)?;
    Ok(OrientedBox {
        center: bx.center * s,
        dims: bx.dims * s,
        heading: bx.heading,
    })
}

pub fn scale_cloud(cloud: &PointCloud, s: f64) -> Result<PointCloud, GeometryError> {
    check_scale(s)?;
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| p * s).collect(),
        intensity: cloud.intensity.clone(),
    })
}

/// Horizontal bearing of a point, radians from +x.
pub fn azimuth(p: &Vec3) -> f64 {
    p.y.atan2(p.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn bx(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, heading: f64) -> OrientedBox {
        OrientedBox::new(Vec3::new(cx, cy, cz), Vec3::new(l, w, h), heading).unwrap()
    }

    #[test]
    fn heading_is_normalized() {
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0 * PI);
        assert!(close(b.heading, PI, 1e-12));
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -PI);
        assert!(close(b.heading, PI, 1e-12));
        assert!(OrientedBox::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(OrientedBox::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::repeat(1.0), 0.0).is_err());
    }

    #[test]
    fn unit_cube_corners() {
        let corners = box_corners(&bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0));
        for c in &corners {
            assert!(c.iter().all(|v| close(v.abs(), 0.5, 1e-12)));
        }
        assert_eq!(corners[0], Vec3::new(0.5, 0.5, -0.5));
        assert_eq!(corners[6], Vec3::new(-0.5, -0.5, 0.5));
    }

    #[test]
    fn rotated_cube_has_same_corner_set() {
        let a = box_corners(&bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0));
        let b = box_corners(&bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, PI / 2.0));
        for p in &b {
            assert!(a.iter().any(|q| (p - q).norm() < 1e-12));
        }
    }

    #[test]
    fn corners_of_rotated_rectangle() {
        let corners = box_corners(&bx(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, PI / 4.0));
        // Hand rotation of (1, 0.5): (cos45 - 0.5 sin45, sin45 + 0.5 cos45).
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [
            (r * (1.0 - 0.5), r * (1.0 + 0.5)),
            (r * (-1.0 - 0.5), r * (-1.0 + 0.5)),
            (r * (-1.0 + 0.5), r * (-1.0 - 0.5)),
            (r * (1.0 + 0.5), r * (1.0 - 0.5)),
        ];
        for (c, (x, y)) in corners.iter().zip(expected) {
            assert!(close(c.x, x, 1e-12) && close(c.y, y, 1e-12), "{c:?} vs ({x}, {y})");
            assert!(close(c.z, -0.5, 1e-12));
        }
    }

    #[test]
    fn containment_and_vertical_cut() {
        let b = bx(0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 0.3);
        assert!(b.contains(&Vec3::new(0.0, 0.0, 1.0), 1.0));
        // 10 % of the height above the floor.
        let low = Vec3::new(0.0, 0.0, 0.2);
        assert!(b.contains(&low, 1.0));
        assert!(!b.contains(&low, 0.7));
        // Boundary counts as inside.
        let top = Vec3::new(0.0, 0.0, 2.0);
        assert!(b.contains(&top, 0.7));
    }

    #[test]
    fn points_in_box_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = bx(1.0, -2.0, 0.5, 4.0, 2.0, 1.5, 0.7);
        let pts: Vec<Vec3> = (0..5000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-3.0..5.0),
                    rng.random_range(-6.0..2.0),
                    rng.random_range(-1.0..2.0),
                )
            })
            .collect();
        let got = points_in_box(&b, &pts, 1.0);
        // Independent check: rotate each point back by -heading by hand.
        let expected: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let (dx, dy) = (p.x - 1.0, p.y + 2.0);
                let ang = -0.7f64;
                let lx = dx * ang.cos() - dy * ang.sin();
                let ly = dx * ang.sin() + dy * ang.cos();
                lx.abs() <= 2.0 && ly.abs() <= 1.0 && (p.z - 0.5).abs() <= 0.75
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expected);
        assert!(!got.is_empty());
        assert_eq!(count_points_in_box(&b, &pts, 1.0), got.len());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert!(close(iou_bev(&a, &a), 1.0, 1e-12));
        assert!(close(iou_3d(&a, &a), 1.0, 1e-12));
        let far = bx(10.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert_eq!(iou_bev(&a, &far), 0.0);
        let shifted = bx(1.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert!(close(iou_bev(&a, &shifted), 1.0 / 3.0, 1e-12));

        let c1 = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let c2 = bx(0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0);
        assert!(close(iou_3d(&c1, &c2), 1.0 / 3.0, 1e-12));
        assert!(close(iou_bev(&c1, &c2), 1.0, 1e-12));
    }

    #[test]
    fn rotated_square_overlap_is_octagon() {
        // Unit square vs the same square rotated 45 degrees: intersection is a
        // regular octagon with area 2(sqrt2 - 1).
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!(close(bev_intersection_area(&a, &b), inter, 1e-12));
        assert!(close(iou_bev(&a, &b), inter / (2.0 - inter), 1e-12));
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let b = bx(2.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn pose_examples() {
        let b = bx(1.0, 2.0, 3.0, 4.0, 2.0, 1.5, 0.0);
        assert_eq!(transform_box(&RigidPose::identity(), &b), b);
        let t = transform_box(&RigidPose::from_translation(Vec3::new(1.0, 2.0, 3.0)), &b);
        assert_eq!(t.center, Vec3::new(2.0, 4.0, 6.0));
        assert_eq!((t.dims, t.heading), (b.dims, b.heading));
        let r = transform_box(&RigidPose::from_yaw(PI / 2.0, Vec3::zeros()), &b);
        assert!(close(r.heading, PI / 2.0, 1e-12));
        assert!((r.center - Vec3::new(-2.0, 1.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn pose_rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidPose::new(m, Vec3::zeros()),
            Err(GeometryError::NotOrthonormal(_))
        ));
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidPose::new(reflection, Vec3::zeros()).is_err());
        assert!(RigidPose::from_row_major(&[0.0; 11]).is_err());
    }

    #[test]
    fn pose_serializes_row_major() {
        let p = RigidPose::from_yaw(0.3, Vec3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&p).unwrap();
        let back: RigidPose = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<RigidPose>("[1,0,0,0, 0,2,0,0, 0,0,1,0]").is_err());
    }

    #[test]
    fn scaling() {
        let b = bx(10.0, 5.0, 0.0, 4.0, 2.0, 1.5, 0.2);
        assert_eq!(scale_box(&b, 1.0).unwrap(), b);
        let s = scale_box(&b, 0.8).unwrap();
        assert!((s.center - Vec3::new(8.0, 4.0, 0.0)).norm() < 1e-12);
        assert!((s.dims - Vec3::new(3.2, 1.6, 1.2)).norm() < 1e-12);
        assert_eq!(s.heading, b.heading);
        assert!(scale_box(&b, 0.0).is_err());
        assert!(scale_box(&b, -1.0).is_err());
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert!(scale_cloud(&cloud, 0.0).is_err());
        assert_eq!(scale_cloud(&cloud, 2.0).unwrap().points[0], Vec3::new(2.0, 4.0, 6.0));
    }

    #[test]
    fn angular_difference_examples() {
        assert!(close(angular_difference(0.0, PI / 2.0), PI / 2.0, 1e-12));
        assert!(close(angular_difference(0.1, TAU - 0.1), 0.2, 1e-12));
        assert_eq!(angular_difference(1.3, 1.3), 0.0);
        assert!(close(angular_difference(0.0, PI), PI, 1e-12));
    }

    #[test]
    fn circular_mean_wraps() {
        let m = circular_mean([(PI - 0.1, 1.0), (-PI + 0.1, 1.0)]).unwrap();
        assert!(close(m.abs(), PI, 1e-12));
        assert!(circular_mean([(0.0, 1.0), (PI, 1.0)]).is_none());
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (
            -20.0..20.0f64,
            -20.0..20.0f64,
            -2.0..2.0f64,
            0.3..6.0f64,
            0.3..3.0f64,
            0.3..3.0f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, l, w, h, t)| bx(x, y, z, l, w, h, t))
    }

    fn near_pair() -> impl Strategy<Value = (OrientedBox, OrientedBox)> {
        (arb_box(), -2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64, 0.7..1.3f64, -PI..PI).prop_map(
            |(a, dx, dy, dz, s, t)| {
                let b = bx(
                    a.center.x + dx,
                    a.center.y + dy,
                    a.center.z + dz,
                    a.dims.x * s,
                    a.dims.y,
                    a.dims.z / s,
                    t,
                );
                (a, b)
            },
        )
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded((a, b) in near_pair()) {
            let (ab, ba) = (iou_bev(&a, &b), iou_bev(&b, &a));
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
            let (ab3, ba3) = (iou_3d(&a, &b), iou_3d(&b, &a));
            prop_assert!((ab3 - ba3).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab3));
        }

        #[test]
        fn iou_is_rigid_invariant((a, b) in near_pair(), yaw in -PI..PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -3.0..3.0f64) {
            let pose = RigidPose::from_yaw(yaw, Vec3::new(tx, ty, tz));
            let (ta, tb) = (transform_box(&pose, &a), transform_box(&pose, &b));
            prop_assert!((iou_bev(&a, &b) - iou_bev(&ta, &tb)).abs() < 1e-6);
            prop_assert!((iou_3d(&a, &b) - iou_3d(&ta, &tb)).abs() < 1e-6);
        }

        #[test]
        fn iou_3d_equals_bev_for_equal_vertical_extent((a, b) in near_pair()) {
            let b = OrientedBox { center: Vec3::new(b.center.x, b.center.y, a.center.z), dims: Vec3::new(b.dims.x, b.dims.y, a.dims.z), ..b };
            prop_assert!((iou_3d(&a, &b) - iou_bev(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-9);
            prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pose_round_trip(a in arb_box(), yaw in -PI..PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let pose = RigidPose::from_yaw(yaw, Vec3::new(tx, ty, 1.0));
            let back = transform_box(&pose.inverse(), &transform_box(&pose, &a));
            prop_assert!((back.center - a.center).norm() < 1e-9);
            prop_assert!(angular_difference(back.heading, a.heading) < 1e-9);
        }

        #[test]
        fn pose_composition(a in arb_box(), y1 in -PI..PI, y2 in -PI..PI, tx in -9.0..9.0f64) {
            let p1 = RigidPose::from_yaw(y1, Vec3::new(tx, 1.0, 0.0));
            let p2 = RigidPose::from_yaw(y2, Vec3::new(-2.0, tx, 0.5));
            let stepwise = transform_box(&p2, &transform_box(&p1, &a));
            let composed = transform_box(&p2.compose(&p1), &a);
            prop_assert!((stepwise.center - composed.center).norm() < 1e-9);
            prop_assert!(angular_difference(stepwise.heading, composed.heading) < 1e-9);
        }

        #[test]
        fn scale_round_trip(a in arb_box(), s in 0.1..5.0f64) {
            let back = scale_box(&scale_box(&a, s).unwrap(), 1.0 / s).unwrap();
            prop_assert!((back.center - a.center).norm() < 1e-9);
            prop_assert!((back.dims - a.dims).norm() < 1e-9);
        }

        #[test]
        fn vertical_cut_is_subset(a in arb_box(), f in 0.05..1.0f64, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..300).map(|_| a.center + Vec3::new(
                rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0))).collect();
            let whole = points_in_box(&a, &pts, 1.0);
            let cut = points_in_box(&a, &pts, f);
            prop_assert!(cut.iter().all(|i| whole.contains(i)));
        }

        #[test]
        fn angular_difference_in_range(a in -20.0..20.0f64, b in -20.0..20.0f64) {
            let d = angular_difference(a, b);
            prop_assert!((0.0..=PI).contains(&d));
            prop_assert!((d - angular_difference(b, a)).abs() < 1e-9);
        }
    }
}
