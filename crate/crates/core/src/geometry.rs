//! Rigid normalization of facial landmark clouds.
//!
//! The target frame puts the midpoint of the two mouth corners at the origin,
//! the corner line on the X axis (left corner at negative x) and an upper-lip
//! reference landmark in the XY plane on the positive-Y side. Corrections are
//! applied in the order translate, yaw (about Y), roll (about Z), pitch
//! (about X): yaw and roll depend only on the corners, pitch needs the extra
//! reference point.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Landmarks closer than this (mm) are treated as coincident.
pub const DEGENERATE_MM: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FaceCloud {
    pub points: Vec<Point>,
    pub frame_index: usize,
    pub corner_left: usize,
    pub corner_right: usize,
    pub upper_ref: usize,
}

impl FaceCloud {
    pub fn new(
        points: Vec<Point>,
        frame_index: usize,
        corner_left: usize,
        corner_right: usize,
        upper_ref: usize,
    ) -> Result<Self> {
        let cloud = Self {
            points,
            frame_index,
            corner_left,
            corner_right,
            upper_ref,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        for (name, idx) in [
            ("left corner", self.corner_left),
            ("right corner", self.corner_right),
            ("upper reference", self.upper_ref),
        ] {
            if idx >= n {
                return Err(Error::InvalidArgument(format!(
                    "{name} index {idx} out of range for {n} points"
                )));
            }
        }
        if self.corner_left == self.corner_right {
            return Err(Error::InvalidArgument("corner indices must differ".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn left(&self) -> Point {
        self.points[self.corner_left]
    }

    pub fn right(&self) -> Point {
        self.points[self.corner_right]
    }

    pub fn reference(&self) -> Point {
        self.points[self.upper_ref]
    }

    pub fn transformed(&self, t: &RigidTransform) -> FaceCloud {
        FaceCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            ..self.clone()
        }
    }
}

/// `p ↦ rotation · p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn rotation(r: Matrix3<f64>) -> Self {
        Self {
            rotation: r,
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.amax().max((self.rotation.determinant() - 1.0).abs())
    }
}

/// Rotation about +Y by `angle`, as used to undo a left/right head turn.
///
/// With `angle = atan2(dz, dx)` it maps `(dx, 0, dz)` onto `(d, 0, 0)`.
pub fn yaw_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Maps `(dx, dy, 0)` onto `(d, 0, 0)` when `angle = atan2(dy, dx)`.
pub fn roll_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps `(0, y, z)` onto `(0, r, 0)` when `angle = atan2(z, y)`.
pub fn pitch_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

/// Angles (radians) and translation removed by [`correct_posture`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
    pub translation: [f64; 3],
}

pub fn translate_to_mouth_origin(cloud: &FaceCloud) -> Result<(FaceCloud, RigidTransform)> {
    cloud.validate()?;
    let (l, r) = (cloud.left(), cloud.right());
    if (r - l).norm() < DEGENERATE_MM {
        return Err(Error::Degenerate(format!(
            "mouth corners coincide in frame {}",
            cloud.frame_index
        )));
    }
    let t = RigidTransform::translation(-(l + r) * 0.5);
    Ok((cloud.transformed(&t), t))
}

fn yaw_angle(cloud: &FaceCloud) -> Result<f64> {
    let d = cloud.right() - cloud.left();
    if d.x.hypot(d.z) < DEGENERATE_MM {
        return Err(Error::Degenerate(format!(
            "mouth corners coincide in the XZ projection in frame {}",
            cloud.frame_index
        )));
    }
    Ok(d.z.atan2(d.x))
}

fn roll_angle(cloud: &FaceCloud) -> Result<f64> {
    let d = cloud.right() - cloud.left();
    if d.x.hypot(d.y) < DEGENERATE_MM {
        return Err(Error::Degenerate(format!(
            "mouth corners coincide in the XY projection in frame {}",
            cloud.frame_index
        )));
    }
    Ok(d.y.atan2(d.x))
}

fn pitch_angle(cloud: &FaceCloud) -> Result<f64> {
    let p = cloud.reference();
    if p.y.hypot(p.z) < DEGENERATE_MM {
        return Err(Error::Degenerate(format!(
            "upper reference landmark lies on the X axis in frame {}",
            cloud.frame_index
        )));
    }
    Ok(p.z.atan2(p.y))
}

/// Rotation about Y that brings both (mouth-centered) corners to `z = 0`.
pub fn yaw_correct(cloud: &FaceCloud) -> Result<(FaceCloud, RigidTransform)> {
    cloud.validate()?;
    let t = RigidTransform::rotation(yaw_matrix(yaw_angle(cloud)?));
    Ok((cloud.transformed(&t), t))
}

/// Rotation about Z that brings both corners to `y = 0`.
pub fn roll_correct(cloud: &FaceCloud) -> Result<(FaceCloud, RigidTransform)> {
    cloud.validate()?;
    let t = RigidTransform::rotation(roll_matrix(roll_angle(cloud)?));
    Ok((cloud.transformed(&t), t))
}

/// Rotation about X that puts the upper reference landmark at `z = 0, y > 0`.
pub fn pitch_correct(cloud: &FaceCloud) -> Result<(FaceCloud, RigidTransform)> {
    cloud.validate()?;
    let t = RigidTransform::rotation(pitch_matrix(pitch_angle(cloud)?));
    Ok((cloud.transformed(&t), t))
}

/// Full correction; returns the composed rigid map and the removed angles.
pub fn correct_posture_with_angles(
    cloud: &FaceCloud,
) -> Result<(FaceCloud, RigidTransform, PoseAngles)> {
    let (c0, t0) = translate_to_mouth_origin(cloud)?;
    let yaw = yaw_angle(&c0)?;
    let ry = RigidTransform::rotation(yaw_matrix(yaw));
    let c1 = c0.transformed(&ry);
    let roll = roll_angle(&c1)?;
    let rr = RigidTransform::rotation(roll_matrix(roll));
    let c2 = c1.transformed(&rr);
    let pitch = pitch_angle(&c2)?;
    let rp = RigidTransform::rotation(pitch_matrix(pitch));
    let c3 = c2.transformed(&rp);
    let total = rp.after(&rr.after(&ry.after(&t0)));
    let angles = PoseAngles {
        yaw,
        roll,
        pitch,
        translation: t0.translation.into(),
    };
    Ok((c3, total, angles))
}

pub fn correct_posture(cloud: &FaceCloud) -> Result<(FaceCloud, RigidTransform)> {
    let (c, t, _) = correct_posture_with_angles(cloud)?;
    Ok((c, t))
}

/// Synthetic head pose: the exact inverse of the yaw, roll, pitch rotations
/// of correction, then a translation. Angles in radians. For a corrected
/// cloud, correcting the posed copy returns these angles.
pub fn pose_transform(yaw: f64, roll: f64, pitch: f64, translation: Vector3<f64>) -> RigidTransform {
    let r = yaw_matrix(yaw).transpose() * roll_matrix(roll).transpose() * pitch_matrix(pitch).transpose();
    RigidTransform {
        rotation: r,
        translation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: Vec<Point>) -> FaceCloud {
        FaceCloud::new(points, 0, 0, 1, 2).unwrap()
    }

    /// Canonical lip-like cloud: corners on X, reference in the XY plane.
    fn canonical() -> FaceCloud {
        cloud(vec![
            Point::new(-25.0, 0.0, 0.0),
            Point::new(25.0, 0.0, 0.0),
            Point::new(0.5, 12.0, 0.0),
            Point::new(-10.0, 8.0, 3.0),
            Point::new(10.0, -9.0, 4.5),
            Point::new(3.0, -14.0, -2.0),
            Point::new(-7.0, 2.0, -6.0),
        ])
    }

    fn max_abs_diff(a: &FaceCloud, b: &FaceCloud) -> f64 {
        a.points
            .iter()
            .zip(&b.points)
            .map(|(p, q)| (p - q).amax())
            .fold(0.0, f64::max)
    }

    fn distance_matrix(c: &FaceCloud) -> Vec<f64> {
        let mut d = Vec::new();
        for p in &c.points {
            for q in &c.points {
                d.push((p - q).norm());
            }
        }
        d
    }

    #[test]
    fn translate_midpoint_already_origin() {
        let c = cloud(vec![
            Point::new(-1.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
        ]);
        let (out, t) = translate_to_mouth_origin(&c).unwrap();
        assert_eq!(out, c);
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn translate_shifts_by_midpoint() {
        let c = cloud(vec![
            Point::new(2.0, 3.0, 4.0),
            Point::new(4.0, 3.0, 4.0),
            Point::new(3.0, 5.0, 4.0),
        ]);
        let (out, t) = translate_to_mouth_origin(&c).unwrap();
        assert_eq!(t.translation, Vector3::new(-3.0, -3.0, -4.0));
        assert_eq!(out.points[2], Point::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn coincident_corners_are_degenerate() {
        let c = cloud(vec![
            Point::new(1.0, 1.0, 1.0),
            Point::new(1.0, 1.0, 1.0 + 1e-8),
            Point::new(0.0, 1.0, 0.0),
        ]);
        assert!(matches!(translate_to_mouth_origin(&c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn yaw_identity_when_flat() {
        let c = canonical();
        let (out, t) = yaw_correct(&c).unwrap();
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(out, c);
    }

    #[test]
    fn yaw_recovers_known_rotation() {
        let c = canonical();
        let posed = c.transformed(&RigidTransform::rotation(yaw_matrix(17f64.to_radians()).transpose()));
        let (out, _) = yaw_correct(&posed).unwrap();
        assert!(max_abs_diff(&out, &c) < 1e-9);
        // Y coordinates are untouched by a yaw correction.
        for (p, q) in out.points.iter().zip(&posed.points) {
            assert_eq!(p.y, q.y);
        }
    }

    #[test]
    fn yaw_45_degrees_by_hand() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = cloud(vec![
            Point::new(-h, 0.0, -h),
            Point::new(h, 0.0, h),
            Point::new(0.0, 1.0, 0.0),
        ]);
        let (out, _) = yaw_correct(&c).unwrap();
        assert!((out.points[0] - Point::new(-1.0, 0.0, 0.0)).amax() < 1e-15);
        assert!((out.points[1] - Point::new(1.0, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn roll_round_trip_and_quarter_turn() {
        let c = canonical();
        let posed = c.transformed(&RigidTransform::rotation(roll_matrix(10f64.to_radians()).transpose()));
        let (out, _) = roll_correct(&posed).unwrap();
        assert!(max_abs_diff(&out, &c) < 1e-9);

        let q = cloud(vec![
            Point::new(0.0, -1.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(-1.0, 0.0, 0.0),
        ]);
        let (out, _) = roll_correct(&q).unwrap();
        assert!((out.points[0] - Point::new(-1.0, 0.0, 0.0)).amax() < 1e-15);
        assert!((out.points[1] - Point::new(1.0, 0.0, 0.0)).amax() < 1e-15);

        let (same, t) = roll_correct(&c).unwrap();
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(same, c);
    }

    #[test]
    fn pitch_round_trip_and_quarter_turn() {
        let c = canonical();
        let posed = c.transformed(&RigidTransform::rotation(pitch_matrix(12f64.to_radians()).transpose()));
        let (out, _) = pitch_correct(&posed).unwrap();
        assert!(max_abs_diff(&out, &c) < 1e-9);

        let q = cloud(vec![
            Point::new(-1.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
        ]);
        let (out, _) = pitch_correct(&q).unwrap();
        assert!((out.points[2] - Point::new(0.0, 1.0, 0.0)).amax() < 1e-15);

        let on_axis = cloud(vec![
            Point::new(-1.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.3, 0.0, 0.0),
        ]);
        assert!(matches!(pitch_correct(&on_axis), Err(Error::Degenerate(_))));
    }

    #[test]
    fn canonical_cloud_gives_identity() {
        let c = canonical();
        let (out, t) = correct_posture(&c).unwrap();
        assert_eq!(t, RigidTransform::identity());
        assert_eq!(out, c);
    }

    #[test]
    fn corners_land_at_half_distance() {
        let c = canonical();
        let pose = pose_transform(0.2, -0.1, 0.15, Vector3::new(10.0, -40.0, 600.0));
        let posed = c.transformed(&pose);
        let (l, r) = (posed.left(), posed.right());
        let d = ((r.x - l.x).powi(2) + (r.y - l.y).powi(2) + (r.z - l.z).powi(2)).sqrt();
        let (out, _) = correct_posture(&posed).unwrap();
        assert!((out.left() - Point::new(-d / 2.0, 0.0, 0.0)).amax() < 1e-9);
        assert!((out.right() - Point::new(d / 2.0, 0.0, 0.0)).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn random_pose_recovered(
            yaw in -15.0f64..15.0, roll in -15.0f64..15.0, pitch in -15.0f64..15.0,
            tx in -200.0f64..200.0, ty in -200.0f64..200.0, tz in -200.0f64..200.0,
        ) {
            let c = canonical();
            let t = Vector3::new(tx, ty, tz);
            let t = if t.norm() > 200.0 { t * (200.0 / t.norm()) } else { t };
            let pose = pose_transform(yaw.to_radians(), roll.to_radians(), pitch.to_radians(), t);
            let posed = c.transformed(&pose);
            let (out, total, angles) = correct_posture_with_angles(&posed).unwrap();
            prop_assert!(max_abs_diff(&out, &c) < 1e-9);
            prop_assert!((angles.yaw - yaw.to_radians()).abs() < 1e-12);
            prop_assert!((angles.roll - roll.to_radians()).abs() < 1e-12);
            prop_assert!((angles.pitch - pitch.to_radians()).abs() < 1e-12);
            prop_assert!((Vector3::from(angles.translation) + t).amax() < 1e-9);
            prop_assert!(total.orthonormality_error() < 1e-12);
            let (again, _) = correct_posture(&out).unwrap();
            prop_assert!(max_abs_diff(&again, &out) < 1e-9);
            for (a, b) in distance_matrix(&posed).iter().zip(distance_matrix(&out)) {
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn translation_preserves_distances(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 4..20)
        ) {
            let mut points: Vec<Point> = pts.iter().map(|&(x, y, z)| Point::new(x, y, z)).collect();
            points[1] = points[0] + Point::new(30.0, 1.0, 2.0);
            let c = cloud(points);
            let (out, _) = translate_to_mouth_origin(&c).unwrap();
            let mid = (out.left() + out.right()) * 0.5;
            prop_assert!(mid.amax() < 1e-12);
            for (a, b) in distance_matrix(&c).iter().zip(distance_matrix(&out)) {
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }
}
