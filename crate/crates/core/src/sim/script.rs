//! Scripted rigid motion, field perturbations and noise over the scan.
//!
//! Absolute time `tau` is measured from the excitation of the first recorded shot;
//! warm-up shots have negative `tau`. Within a shot, `t` is time since excitation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RigidPose;

/// Piecewise-constant object pose: `(start_time_s, pose)` segments sorted by start time.
/// Before the first segment the object sits at the identity pose.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseSchedule {
    pub segments: Vec<(f64, RigidPose)>,
}

impl PoseSchedule {
    pub fn constant(pose: RigidPose) -> Self {
        Self { segments: vec![(f64::NEG_INFINITY, pose)] }
    }

    /// Poses repeated cyclically, each held for `period` seconds from time 0 until `until`.
    pub fn cyclic(poses: &[RigidPose], period: f64, until: f64) -> Self {
        let mut segments = Vec::new();
        if poses.is_empty() || !(period > 0.0) {
            return Self { segments };
        }
        let mut t = 0.0;
        let mut i = 0;
        while t < until {
            segments.push((t, poses[i % poses.len()]));
            i += 1;
            t = i as f64 * period;
        }
        Self { segments }
    }

    /// `[0, +p, 0, -p, 0, +y, 0, -y]` with pitch/yaw steps of `step_deg`, one pose per `period`.
    pub fn instructed(step_deg: f64, period: f64, until: f64) -> Self {
        let s = step_deg.to_radians();
        let id = RigidPose::identity();
        let pattern = [id, RigidPose::pitch(s), id, RigidPose::pitch(-s), id, RigidPose::yaw(s), id, RigidPose::yaw(-s)];
        Self::cyclic(&pattern, period, until)
    }

    /// Alternates between the identity and a shift of `amplitude_mm` along `axis`.
    pub fn alternating_shift(axis: usize, amplitude_mm: f64, period: f64, until: f64) -> Self {
        let mut t = [0.0; 3];
        t[axis] = amplitude_mm * 1e-3;
        Self::cyclic(&[RigidPose::identity(), RigidPose::translated(t)], period, until)
    }

    /// Alternates between the identity and a rotation of `angle_deg` about `axis`.
    pub fn alternating_rotation(axis: usize, angle_deg: f64, period: f64, until: f64) -> Self {
        Self::cyclic(&[RigidPose::identity(), RigidPose::about_axis(axis, angle_deg.to_radians())], period, until)
    }

    pub fn pose_at(&self, tau: f64) -> RigidPose {
        let n = self.segments.partition_point(|(start, _)| *start <= tau);
        if n == 0 {
            RigidPose::identity()
        } else {
            self.segments[n - 1].1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("pose segments must have increasing start times".into()));
        }
        if self.segments.iter().any(|(t, p)| t.is_nan() || !p.is_finite()) {
            return Err(Error::NonFinite("pose schedule".into()));
        }
        Ok(())
    }
}

/// Global off-resonance contribution, boundary units Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyTerm {
    Constant { hz: f64 },
    /// Linear drift through zero at `tau = 0`.
    Drift { hz_per_min: f64 },
    Sinusoid { amplitude_hz: f64, freq_hz: f64, #[serde(default)] phase_rad: f64 },
}

impl FrequencyTerm {
    /// Angular frequency in rad/s.
    pub fn omega(&self, tau: f64) -> f64 {
        2.0 * PI
            * match *self {
                FrequencyTerm::Constant { hz } => hz,
                FrequencyTerm::Drift { hz_per_min } => hz_per_min / 60.0 * tau,
                FrequencyTerm::Sinusoid { amplitude_hz, freq_hz, phase_rad } => {
                    amplitude_hz * (2.0 * PI * freq_hz * tau + phase_rad).sin()
                }
            }
    }

    /// `int_a^b omega(s) ds` in rad.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        2.0 * PI
            * match *self {
                FrequencyTerm::Constant { hz } => hz * (b - a),
                FrequencyTerm::Drift { hz_per_min } => hz_per_min / 60.0 * 0.5 * (b * b - a * a),
                FrequencyTerm::Sinusoid { amplitude_hz, freq_hz, phase_rad } => {
                    if freq_hz == 0.0 {
                        amplitude_hz * phase_rad.sin() * (b - a)
                    } else {
                        let w = 2.0 * PI * freq_hz;
                        amplitude_hz / w * ((w * a + phase_rad).cos() - (w * b + phase_rad).cos())
                    }
                }
            }
    }

    fn is_finite(&self) -> bool {
        match *self {
            FrequencyTerm::Constant { hz } => hz.is_finite(),
            FrequencyTerm::Drift { hz_per_min } => hz_per_min.is_finite(),
            FrequencyTerm::Sinusoid { amplitude_hz, freq_hz, phase_rad } => {
                amplitude_hz.is_finite() && freq_hz.is_finite() && phase_rad.is_finite()
            }
        }
    }
}

/// Global receiver phase at excitation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseTerm {
    Constant { rad: f64 },
    Sinusoid { amplitude_rad: f64, freq_hz: f64 },
}

impl PhaseTerm {
    pub fn phase(&self, tau: f64) -> f64 {
        match *self {
            PhaseTerm::Constant { rad } => rad,
            PhaseTerm::Sinusoid { amplitude_rad, freq_hz } => amplitude_rad * (2.0 * PI * freq_hz * tau).sin(),
        }
    }
}

/// Shot-periodic field transient switched on by the slice-encoding pre-phaser just
/// before the EPI readout: `omega(t) = A (kz / kz_max) b(tau) exp(-(t - t_ro) / tau_e)`
/// for `t >= t_ro`, with signed `kz / kz_max` in `[-1, 1)` and a slow build-up
/// `b(tau) = 1 - exp(-tau / buildup_s)` (or 1 when `buildup_s` is 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombTransient {
    pub amplitude_hz: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub buildup_s: f64,
}

impl CombTransient {
    fn envelope(&self, tau: f64) -> f64 {
        if self.buildup_s > 0.0 {
            1.0 - (-tau.max(0.0) / self.buildup_s).exp()
        } else {
            1.0
        }
    }

    /// Phase accrued by time `t` after excitation (rad).
    pub fn phase(&self, tau: f64, t: f64, t_ro: f64, kz_frac: f64) -> f64 {
        if t <= t_ro {
            return 0.0;
        }
        let a = 2.0 * PI * self.amplitude_hz * kz_frac * self.envelope(tau);
        a * self.tau_s * (1.0 - (-(t - t_ro) / self.tau_s).exp())
    }

    /// Instantaneous transient frequency (rad/s).
    pub fn omega(&self, tau: f64, t: f64, t_ro: f64, kz_frac: f64) -> f64 {
        if t < t_ro {
            return 0.0;
        }
        2.0 * PI * self.amplitude_hz * kz_frac * self.envelope(tau) * (-(t - t_ro) / self.tau_s).exp()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationScript {
    pub pose: PoseSchedule,
    pub frequency: Vec<FrequencyTerm>,
    pub phase: Vec<PhaseTerm>,
    pub comb: Option<CombTransient>,
    /// Complex noise std per sample and coil.
    pub noise_std: f64,
    pub seed: u64,
}

impl PerturbationScript {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        if !self.frequency.iter().all(FrequencyTerm::is_finite) {
            return Err(Error::NonFinite("frequency terms".into()));
        }
        if !self.phase.iter().all(|p| p.phase(0.0).is_finite()) {
            return Err(Error::NonFinite("phase terms".into()));
        }
        if let Some(c) = &self.comb {
            if !c.amplitude_hz.is_finite() || !(c.tau_s > 0.0) || !(c.buildup_s >= 0.0) {
                return Err(Error::Config("comb transient needs finite amplitude, tau_s > 0 and buildup_s >= 0".into()));
            }
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn pose_at(&self, tau: f64) -> RigidPose {
        self.pose.pose_at(tau)
    }

    /// Global angular frequency at absolute time `tau` (rad/s), transient excluded.
    pub fn omega_at(&self, tau: f64) -> f64 {
        self.frequency.iter().map(|f| f.omega(tau)).sum()
    }

    /// Global phase at excitation time `tau` (rad).
    pub fn phase_at(&self, tau: f64) -> f64 {
        self.phase.iter().map(|p| p.phase(tau)).sum()
    }

    /// Total phase of a sample acquired `t` after the excitation at `tau`: global phase,
    /// off-resonance accrued since excitation, and the readout transient.
    pub fn accrued_phase(&self, tau: f64, t: f64, t_ro: f64, kz_frac: f64) -> f64 {
        let mut psi = self.phase_at(tau);
        for f in &self.frequency {
            psi += f.integral(tau, tau + t);
        }
        if let Some(c) = &self.comb {
            psi += c.phase(tau, t, t_ro, kz_frac);
        }
        psi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instructed_pattern_at_fifteen_seconds_is_plus_pitch() {
        let s = PoseSchedule::instructed(1.0, 10.0, 200.0);
        let p = s.pose_at(15.0);
        assert!((p.angles[0] - 1f64.to_radians()).abs() < 1e-15);
        assert_eq!(p.angles[1..], [0.0, 0.0]);
        assert!(s.pose_at(5.0).is_identity());
        assert!((s.pose_at(35.0).angles[0] + 1f64.to_radians()).abs() < 1e-15);
        assert!((s.pose_at(55.0).angles[2] - 1f64.to_radians()).abs() < 1e-15);
        assert!((s.pose_at(95.0).angles[0] - 1f64.to_radians()).abs() < 1e-15);
        assert!(s.pose_at(-1.0).is_identity());
    }

    #[test]
    fn drift_integral_matches_quadrature() {
        let terms = [
            FrequencyTerm::Drift { hz_per_min: 5.0 },
            FrequencyTerm::Constant { hz: -2.0 },
            FrequencyTerm::Sinusoid { amplitude_hz: 0.7, freq_hz: 0.3, phase_rad: 0.4 },
        ];
        for f in &terms {
            let (a, b) = (12.3, 12.3 + 0.05);
            let n = 20000;
            let h = (b - a) / n as f64;
            let quad: f64 = (0..n).map(|i| f.omega(a + (i as f64 + 0.5) * h) * h).sum();
            assert!((quad - f.integral(a, b)).abs() < 1e-9, "{f:?}");
        }
    }

    #[test]
    fn zero_script_has_no_phase() {
        let s = PerturbationScript::default();
        assert_eq!(s.accrued_phase(3.0, 0.03, 0.01, 0.5), 0.0);
        assert!(s.pose_at(3.0).is_identity());
    }

    #[test]
    fn comb_is_silent_before_readout_and_signed() {
        let c = CombTransient { amplitude_hz: 1.0, tau_s: 0.02, buildup_s: 0.0 };
        assert_eq!(c.phase(1.0, 0.005, 0.01, 0.5), 0.0);
        let up = c.phase(1.0, 0.03, 0.01, 0.5);
        let down = c.phase(1.0, 0.03, 0.01, -0.5);
        assert!(up > 0.0 && (up + down).abs() < 1e-15);
    }

    #[test]
    fn unsorted_schedule_rejected() {
        let s = PoseSchedule { segments: vec![(1.0, RigidPose::identity()), (0.5, RigidPose::identity())] };
        assert!(s.validate().is_err());
    }
}
