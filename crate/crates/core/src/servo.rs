//! Run-time feedback loop driven by navigator estimates.
//!
//! Each navigator is played with the currently applied geometry `P_s`, demodulated by
//! the FOV shift of `P_s` and by the running phase/frequency totals, and estimated
//! against the model. The estimate `E` is relative to `P_s`, so the object pose target
//! is `T_j = P_s (+) E`. The relative update `T_prev^-1 (+) T_j` matures `latency`
//! shots later; composing matured updates in order telescopes to the target of shot
//! `j - latency`. Phase and frequency are tracked but never fed back into acquisition.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, RigidPose, TimingConfig};
use crate::navigator::{ModelMatrix, ParameterTrace};
use crate::sim::{NavigatorSignal, ScanController, ShotTruth};
use crate::C64;

/// Navigators consumed by calibration at the start of the warm-up.
pub const CALIBRATION_SHOTS: i64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServoMode {
    /// Navigators are estimated and traced, geometry stays fixed.
    #[default]
    Off,
    On,
    /// Feedback with ground-truth parameters instead of estimates, same latency.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    pub mode: ServoMode,
    /// Shots between estimation and application; `None` means `ceil(0.3 s / TR)`.
    pub latency_shots: Option<usize>,
    pub calibration_step_deg: f64,
    pub outlier_rotation_deg: f64,
    pub outlier_shift_mm: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            mode: ServoMode::Off,
            latency_shots: None,
            calibration_step_deg: 1.0,
            outlier_rotation_deg: 10.0,
            outlier_shift_mm: 20.0,
        }
    }
}

/// Whole shots needed to cover 300 ms of processing latency.
pub fn default_latency(tr: f64) -> usize {
    (0.300 / tr - 1e-9).ceil().max(0.0) as usize
}

pub struct ControllerState {
    mode: ServoMode,
    latency: usize,
    delta: f64,
    max_rotation: f64,
    max_shift: f64,
    warmup: i64,
    calibration: Vec<NavigatorSignal>,
    model: Option<ModelMatrix>,
    reference_truth: Option<(f64, f64)>,
    applied: RigidPose,
    nav_pose: RigidPose,
    pending: VecDeque<(i64, RigidPose)>,
    last_target: RigidPose,
    phase_total: f64,
    freq_total: f64,
    /// Raw relative estimates per recorded shot.
    pub estimates: ParameterTrace,
    /// Absolute totals: object pose target, global phase and frequency.
    pub totals: ParameterTrace,
    /// Geometry used for each EPI readout (phase and frequency are never applied).
    pub applied_trace: ParameterTrace,
    /// Recorded shots whose estimate was rejected as an outlier.
    pub outliers: Vec<usize>,
}

impl ControllerState {
    pub fn new(config: &ServoConfig, timing: &TimingConfig) -> Result<Self> {
        let delta = config.calibration_step_deg.to_radians();
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config("calibration_step_deg must be positive".into()));
        }
        if !(config.outlier_rotation_deg > 0.0) || !(config.outlier_shift_mm > 0.0) {
            return Err(Error::Config("outlier thresholds must be positive".into()));
        }
        let warmup = (timing.warmup_volumes * timing.nz) as i64;
        if warmup < CALIBRATION_SHOTS {
            return Err(Error::Config("warm-up too short for calibration".into()));
        }
        Ok(Self {
            mode: config.mode,
            latency: config.latency_shots.unwrap_or_else(|| default_latency(timing.tr)),
            delta,
            max_rotation: config.outlier_rotation_deg.to_radians(),
            max_shift: config.outlier_shift_mm * 1e-3,
            warmup,
            calibration: Vec::with_capacity(CALIBRATION_SHOTS as usize),
            model: None,
            reference_truth: None,
            applied: RigidPose::identity(),
            nav_pose: RigidPose::identity(),
            pending: VecDeque::new(),
            last_target: RigidPose::identity(),
            phase_total: 0.0,
            freq_total: 0.0,
            estimates: ParameterTrace::new(),
            totals: ParameterTrace::new(),
            applied_trace: ParameterTrace::new(),
            outliers: Vec::new(),
        })
    }

    pub fn latency(&self) -> usize {
        self.latency
    }

    pub fn mode(&self) -> ServoMode {
        self.mode
    }

    pub fn model(&self) -> Option<&ModelMatrix> {
        self.model.as_ref()
    }

    pub fn applied_pose(&self) -> RigidPose {
        self.applied
    }

    fn mature(&mut self, j: i64) {
        while let Some(&(at, update)) = self.pending.front() {
            if at > j {
                break;
            }
            self.applied = self.applied.compose(&update);
            self.pending.pop_front();
        }
    }

    fn demodulate(&self, nav: &NavigatorSignal) -> ndarray::Array2<C64> {
        let t_s = self.nav_pose.translation_vec();
        let mut out = nav.samples.clone();
        for (n, mut row) in out.rows_mut().into_iter().enumerate() {
            let t = nav.trajectory.times()[n];
            let ph = nav.trajectory.coord(n).dot(&t_s) - (self.phase_total + self.freq_total * t);
            if ph != 0.0 {
                let f = C64::from_polar(1.0, ph);
                row.mapv_inplace(|v| v * f);
            }
        }
        out
    }

    fn oracle_estimate(&self, truth: &ShotTruth) -> ParameterVector {
        let (phi0, w0) = self.reference_truth.unwrap_or((0.0, 0.0));
        ParameterVector {
            rigid: self.nav_pose.inverse().compose(&truth.object_pose_nav),
            phase: truth.phase - phi0 - self.phase_total,
            frequency: truth.omega - w0 - self.freq_total,
        }
    }

    fn is_outlier(&self, e: &ParameterVector) -> bool {
        e.rigid.rotation_angle() > self.max_rotation || e.rigid.translation_norm() > self.max_shift
    }
}

impl ScanController for ControllerState {
    fn navigator_geometry(&mut self, j: i64) -> RigidPose {
        let c = j + self.warmup;
        self.nav_pose = if (1..=3).contains(&c) {
            RigidPose::about_axis((c - 1) as usize, -self.delta)
        } else {
            self.mature(j);
            self.applied
        };
        self.nav_pose
    }

    fn on_navigator(&mut self, j: i64, nav: &NavigatorSignal, truth: &ShotTruth) -> Result<RigidPose> {
        let c = j + self.warmup;
        if c < CALIBRATION_SHOTS {
            self.calibration.push(nav.clone());
            if c == CALIBRATION_SHOTS - 1 {
                let refs = std::mem::take(&mut self.calibration);
                let model = ModelMatrix::from_references(&refs[0], [&refs[1], &refs[2], &refs[3]], refs[4].clone(), self.delta)?;
                log::debug!("navigator model calibrated, condition number {:.3e}", model.condition);
                self.model = Some(model);
                self.reference_truth = Some((truth.phase, truth.omega));
            }
            return Ok(self.applied);
        }
        let model = self.model.as_ref().ok_or_else(|| Error::Calibration("navigator model missing".into()))?;
        let est = match self.mode {
            ServoMode::Oracle => self.oracle_estimate(truth),
            _ => model.estimate_samples(&self.demodulate(nav))?,
        };
        let outlier = self.is_outlier(&est);
        if outlier {
            log::warn!("shot {j}: navigator estimate rejected as outlier, holding previous correction");
        } else {
            let target = self.nav_pose.compose(&est.rigid);
            self.phase_total += est.phase;
            self.freq_total += est.frequency;
            if self.mode != ServoMode::Off {
                let update = self.last_target.inverse().compose(&target);
                self.pending.push_back((j + self.latency as i64, update));
            }
            self.last_target = target;
        }
        self.mature(j);
        if j >= 0 {
            let ju = j as usize;
            if outlier {
                self.outliers.push(ju);
            }
            self.estimates.push(ju, truth.time, &est)?;
            let total = ParameterVector { rigid: self.last_target, phase: self.phase_total, frequency: self.freq_total };
            self.totals.push(ju, truth.time, &total)?;
            self.applied_trace.push(ju, truth.time, &ParameterVector { rigid: self.applied, ..ParameterVector::zero() })?;
        }
        Ok(self.applied)
    }
}

/// Rotation angle (rad) of the object relative to the EPI geometry for each shot.
pub fn residual_rotation(truth: &[ShotTruth]) -> Vec<f64> {
    truth
        .iter()
        .map(|t| t.scanner_pose_epi.inverse().compose(&t.object_pose_epi).rotation_angle())
        .collect()
}
