//! Rigid poses and the 8-component perturbation vector.
//!
//! Axes are scanner axes: x = RL (readout), y = AP (phase encode), z = FH (slice encode).
//! Rotations are right-handed and stored as (pitch, roll, yaw) angles about x, y and z.
//! The rotation matrix is the intrinsic sequence pitch -> roll -> yaw,
//! `R = Rx(pitch) * Ry(roll) * Rz(yaw)`.
//!
//! Internally angles are radians and translations meters; degrees and millimeters only
//! appear at configuration and output boundaries.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid-body pose `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct RigidPose {
    /// (pitch, roll, yaw) in radians.
    pub angles: [f64; 3],
    /// (RL, AP, FH) translation in meters.
    pub translation: [f64; 3],
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Recovers (pitch, roll, yaw) from `Rx * Ry * Rz`.
pub fn angles_from_matrix(r: &Matrix3<f64>) -> [f64; 3] {
    let roll = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let pitch = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let yaw = (-r[(0, 1)]).atan2(r[(0, 0)]);
    [pitch, roll, yaw]
}

impl RigidPose {
    pub const fn identity() -> Self {
        Self { angles: [0.0; 3], translation: [0.0; 3] }
    }

    pub fn new(angles: [f64; 3], translation: [f64; 3]) -> Self {
        Self { angles, translation }
    }

    /// Pose from (pitch, roll, yaw) in degrees and a translation in millimeters.
    pub fn from_degrees_mm(angles_deg: [f64; 3], translation_mm: [f64; 3]) -> Self {
        Self {
            angles: angles_deg.map(f64::to_radians),
            translation: translation_mm.map(|t| t * 1e-3),
        }
    }

    pub fn pitch(rad: f64) -> Self {
        Self::new([rad, 0.0, 0.0], [0.0; 3])
    }

    pub fn roll(rad: f64) -> Self {
        Self::new([0.0, rad, 0.0], [0.0; 3])
    }

    pub fn yaw(rad: f64) -> Self {
        Self::new([0.0, 0.0, rad], [0.0; 3])
    }

    pub fn about_axis(axis: usize, rad: f64) -> Self {
        let mut angles = [0.0; 3];
        angles[axis] = rad;
        Self::new(angles, [0.0; 3])
    }

    pub fn translated(t: [f64; 3]) -> Self {
        Self::new([0.0; 3], t)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [p, r, y] = self.angles;
        rot_x(p) * rot_y(r) * rot_z(y)
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Self { angles: angles_from_matrix(r), translation: [t.x, t.y, t.z] }
    }

    /// Pose equivalent to applying `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        let ra = self.rotation();
        let r = ra * other.rotation();
        let t = self.translation_vec() + ra * other.translation_vec();
        Self::from_parts(&r, &t)
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation_vec());
        Self::from_parts(&rt, &t)
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * x + self.translation_vec()
    }

    /// Total rotation angle in radians (axis-angle magnitude).
    pub fn rotation_angle(&self) -> f64 {
        let r = self.rotation();
        let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        (0.5 * w.norm()).atan2(0.5 * (r.trace() - 1.0))
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation_vec().norm()
    }

    pub fn angles_deg(&self) -> [f64; 3] {
        self.angles.map(f64::to_degrees)
    }

    pub fn translation_mm(&self) -> [f64; 3] {
        self.translation.map(|t| t * 1e3)
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }

    pub fn is_identity(&self) -> bool {
        self.angles == [0.0; 3] && self.translation == [0.0; 3]
    }
}

/// Perturbation vector: rigid motion, global phase (rad) and global frequency (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ParameterVector {
    pub rigid: RigidPose,
    pub phase: f64,
    pub frequency: f64,
}

/// Component order used by the navigator model and all 8-element arrays.
pub const PARAMETER_NAMES: [&str; 8] =
    ["pitch", "roll", "yaw", "dx", "dy", "dz", "phase", "frequency"];

impl ParameterVector {
    pub const fn zero() -> Self {
        Self { rigid: RigidPose::identity(), phase: 0.0, frequency: 0.0 }
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self {
            rigid: RigidPose::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]),
            phase: v[6],
            frequency: v[7],
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let a = self.rigid.angles;
        let t = self.rigid.translation;
        [a[0], a[1], a[2], t[0], t[1], t[2], self.phase, self.frequency]
    }

    /// Accumulates a relative update: poses compose (`self` then `rel`), phase and
    /// frequency add. For small angles this reduces to the component-wise sum.
    pub fn accumulate(&self, rel: &ParameterVector) -> ParameterVector {
        ParameterVector {
            rigid: self.rigid.compose(&rel.rigid),
            phase: self.phase + rel.phase,
            frequency: self.frequency + rel.frequency,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rigid.is_finite() && self.phase.is_finite() && self.frequency.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn compose_identity_is_noop() {
        let p = RigidPose::from_degrees_mm([1.0, -2.0, 0.5], [3.0, -1.0, 2.0]);
        assert_eq!(RigidPose::identity().compose(&RigidPose::identity()), RigidPose::identity());
        let q = RigidPose::identity().compose(&p);
        for i in 0..3 {
            assert!((q.angles[i] - p.angles[i]).abs() < 1e-15);
            assert!((q.translation[i] - p.translation[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_inverse_gives_identity() {
        let p = RigidPose::from_degrees_mm([10.0, -20.0, 35.0], [3.0, -1.0, 2.0]);
        let id = p.compose(&p.inverse());
        assert!(id.angles.iter().all(|a| a.abs() < 1e-12));
        assert!(id.translation.iter().all(|t| t.abs() < 1e-12));
        let id2 = p.inverse().compose(&p);
        assert!(id2.rotation_angle() < 1e-12);
    }

    #[test]
    fn yaw_steps_add() {
        // Rotation-matrix product oracle: Rz(a) Rz(b) = Rz(a + b).
        let a = RigidPose::yaw(1f64.to_radians());
        let c = a.compose(&a);
        let oracle = rot_z(1f64.to_radians()) * rot_z(1f64.to_radians());
        assert!(max_abs_diff(&c.rotation(), &oracle) < 1e-15);
        assert!((c.angles[2] - 2f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn pitch_sign_convention() {
        // +1 degree pitch tilts the AP axis towards FH.
        let p = RigidPose::from_degrees_mm([1.0, 0.0, 0.0], [0.0; 3]);
        let ey = p.apply(&Vector3::new(0.0, 1.0, 0.0));
        let a = 1f64.to_radians();
        assert!((ey - Vector3::new(0.0, a.cos(), a.sin())).norm() < 1e-15);
        let ez = p.apply(&Vector3::new(0.0, 0.0, 1.0));
        assert!((ez - Vector3::new(0.0, -a.sin(), a.cos())).norm() < 1e-15);
    }

    #[test]
    fn matrix_order_is_pitch_roll_yaw() {
        let p = RigidPose::from_degrees_mm([5.0, 7.0, -3.0], [0.0; 3]);
        let [a, b, c] = p.angles;
        let oracle = rot_x(a) * rot_y(b) * rot_z(c);
        assert!(max_abs_diff(&p.rotation(), &oracle) < 1e-15);
        let back = angles_from_matrix(&oracle);
        for i in 0..3 {
            assert!((back[i] - p.angles[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = RigidPose::from_degrees_mm([0.0, 0.0, 90.0], [1.0, 0.0, 0.0]);
        let b = RigidPose::from_degrees_mm([0.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        let x = Vector3::new(0.3, -0.2, 0.1);
        let direct = a.apply(&b.apply(&x));
        let composed = a.compose(&b).apply(&x);
        assert!((direct - composed).norm() < 1e-15);
    }

    #[test]
    fn small_updates_accumulate_additively() {
        let u = ParameterVector::from_array([1e-4, -2e-4, 3e-4, 1e-5, 0.0, -1e-5, 0.01, 3.0]);
        let v = ParameterVector::from_array([-2e-4, 1e-4, 1e-4, 0.0, 2e-5, 1e-5, -0.02, 1.0]);
        let acc = u.accumulate(&v).to_array();
        let (ua, va) = (u.to_array(), v.to_array());
        for i in 0..8 {
            // Second-order terms of the composition are O(1e-8).
            assert!((acc[i] - (ua[i] + va[i])).abs() < 1e-7, "component {i}");
        }
        let zero = ParameterVector::zero().accumulate(&ParameterVector::zero());
        assert_eq!(zero, ParameterVector::zero());
    }

    #[test]
    fn parameter_vector_serde_roundtrip() {
        let p = ParameterVector::from_array([
            0.0123456789012345,
            -1e-7,
            0.3,
            1.0 / 3.0,
            -2e-3,
            7e-4,
            std::f64::consts::PI,
            -31.41592653589793,
        ]);
        let json = serde_json::to_string(&p).unwrap();
        let back: ParameterVector = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        let t = toml::to_string(&p).unwrap();
        let back: ParameterVector = toml::from_str(&t).unwrap();
        assert_eq!(p, back);
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(p in -60.0f64..60.0, r in -60.0f64..60.0, y in -60.0f64..60.0,
                             tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0) {
            let pose = RigidPose::from_degrees_mm([p, r, y], [tx, ty, tz]);
            let id = pose.compose(&pose.inverse());
            prop_assert!(id.rotation_angle() < 1e-12);
            prop_assert!(id.translation_norm() < 1e-12);
        }
    }
}
