//! Retrospective navigator-based phase correction of EPI shots.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::sim::ShotData;
use crate::C64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceFilter {
    #[default]
    None,
    /// Non-causal centered median over `window` shots (odd).
    Median { window: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Frequency correction referenced to the excitation, `tau = t`.
    #[default]
    Absolute,
    /// Frequency correction referenced to TE, `tau = t - TE`.
    Relative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseCorrectionConfig {
    pub filter: TraceFilter,
    pub timing: TimingMode,
}

impl PhaseCorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if let TraceFilter::Median { window } = self.filter {
            if window == 0 || window % 2 == 0 {
                return Err(Error::Config(format!("median window {window} must be odd and >= 1")));
            }
        }
        Ok(())
    }
}

/// Centered median with edge replication; `None` and window 1 are the identity.
pub fn filter_trace(series: &[f64], filter: TraceFilter) -> Result<Vec<f64>> {
    ensure_finite("trace", series.iter().copied())?;
    let window = match filter {
        TraceFilter::None => return Ok(series.to_vec()),
        TraceFilter::Median { window } => window,
    };
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidInput(format!("median window {window} must be odd and >= 1")));
    }
    if window == 1 || series.is_empty() {
        return Ok(series.to_vec());
    }
    let half = window / 2;
    let n = series.len() as i64;
    let mut buf = vec![0.0; window];
    Ok((0..n)
        .map(|i| {
            for (w, b) in buf.iter_mut().enumerate() {
                let idx = (i + w as i64 - half as i64).clamp(0, n - 1);
                *b = series[idx as usize];
            }
            buf.sort_by(|a, b| a.total_cmp(b));
            buf[half]
        })
        .collect())
}

/// Multiplies every sample by `exp(-i (domega tau + dphi))`.
pub fn apply_phase_correction(shot: &ShotData, dphi: f64, domega: f64, mode: TimingMode, te: f64) -> Result<ShotData> {
    ensure_finite("phase correction", [dphi, domega, te])?;
    let origin = match mode {
        TimingMode::Absolute => 0.0,
        TimingMode::Relative => te,
    };
    let mut out = shot.clone();
    for ((m, k), t) in shot.timing.indexed_iter() {
        let f = C64::from_polar(1.0, -(domega * (t - origin) + dphi));
        out.samples.slice_mut(ndarray::s![m, k, ..]).mapv_inplace(|v| v * f);
    }
    Ok(out)
}

/// Undoes an object translation `shift` (m) by multiplying each sample with
/// `exp(+i k . shift)` along the played trajectory.
pub fn correct_translations(shot: &ShotData, shift: [f64; 3]) -> Result<ShotData> {
    ensure_finite("translation", shift)?;
    let (nm, nk, _) = shot.samples.dim();
    if shot.trajectory.len() != nm * nk {
        return Err(Error::InvalidInput("shot trajectory does not cover the samples".into()));
    }
    let mut out = shot.clone();
    if shift == [0.0; 3] {
        return Ok(out);
    }
    let s = nalgebra::Vector3::from(shift);
    for m in 0..nm {
        for k in 0..nk {
            let f = C64::from_polar(1.0, shot.trajectory.coord(m * nk + k).dot(&s));
            out.samples.slice_mut(ndarray::s![m, k, ..]).mapv_inplace(|v| v * f);
        }
    }
    Ok(out)
}

/// Applies filtered per-shot `(phase, frequency)` totals to every shot.
pub fn correct_scan(
    shots: &[ShotData],
    phase: &[f64],
    frequency: &[f64],
    config: &PhaseCorrectionConfig,
    te: f64,
) -> Result<Vec<ShotData>> {
    config.validate()?;
    if phase.len() != shots.len() || frequency.len() != shots.len() {
        return Err(Error::InvalidInput("trace length differs from the number of shots".into()));
    }
    let phase = filter_trace(phase, config.filter)?;
    let frequency = filter_trace(frequency, config.filter)?;
    shots
        .iter()
        .zip(phase.iter().zip(&frequency))
        .map(|(s, (p, w))| apply_phase_correction(s, *p, *w, config.timing, te))
        .collect()
}
