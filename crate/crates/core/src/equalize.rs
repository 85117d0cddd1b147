//! Self-navigated per-shot phase/frequency equalization against peer shots of the
//! first volume.
//!
//! A single estimation pass fits the echo-train phase of `sum_{k,c} conj(S_ref) S`
//! against echo center times. Intra-echo timing makes that pass slightly biased, so
//! the estimate is refined by re-estimating on the corrected shot until the update
//! vanishes; the first pass is the plain single-shot estimate and the fixed point
//! restores `peer * exp(i (w t + p))` exactly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ShotData;
use crate::C64;

/// Echoes (or collapsed samples) below this fraction of the peak product magnitude are
/// excluded from the fit.
pub const RELIABILITY: f64 = 1e-9;
const MAX_ITER: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EqualizationMode {
    /// Scalar product over readout and coils, fit along the echo train.
    Epi,
    /// Echo and readout collapsed into one time-sorted dimension, coil sum, centered
    /// moving average of `window` samples, fit against per-sample times.
    Generic { window: usize },
}

impl Default for EqualizationMode {
    fn default() -> Self {
        EqualizationMode::Epi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotPhaseEstimate {
    pub shot_index: usize,
    /// Excitation time (s).
    pub time: f64,
    /// Phase at excitation (rad).
    pub dphi: f64,
    /// rad/s
    pub domega: f64,
    /// RMS deviation of the unwrapped phases from the fitted line (rad).
    pub fit_residual: f64,
    /// Unwrapped phase differences of the first pass.
    pub echo_phases: Vec<f64>,
    /// Fewer than two reliable points: no correction applied.
    pub skipped: bool,
}

/// Reference shots of the first volume, one per segment index.
#[derive(Clone, Debug)]
pub struct PeerBank {
    refs: Vec<ShotData>,
}

impl PeerBank {
    pub fn from_first_volume(shots: &[ShotData], nz: usize) -> Result<Self> {
        if nz == 0 || shots.len() < nz {
            return Err(Error::InvalidInput(format!("need at least {nz} shots to fill the peer bank")));
        }
        let refs = shots[..nz].to_vec();
        for (l, s) in refs.iter().enumerate() {
            if refs[..l].iter().any(|r| r.kz_index == s.kz_index) {
                return Err(Error::InvalidInput(format!("segment {} appears twice in the reference volume", s.kz_index)));
            }
        }
        Ok(Self { refs })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Peer for the shot at position `pos` of its volume.
    pub fn peer(&self, pos: usize) -> &ShotData {
        &self.refs[pos]
    }
}

/// Echo-train phase differences between a shot and its peer.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoPhases {
    pub products: Vec<C64>,
    pub unwrapped: Vec<f64>,
    pub reliable: Vec<bool>,
}

/// 1D unwrapping: the first value keeps its principal branch, every later difference
/// is mapped into `(-pi, pi]`.
pub fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    for (i, &p) in wrapped.iter().enumerate() {
        if i == 0 {
            out.push(C64::from_polar(1.0, p).arg());
            continue;
        }
        let prev = out[i - 1];
        let mut d = (p - prev).rem_euclid(2.0 * PI);
        if d > PI {
            d -= 2.0 * PI;
        }
        out.push(prev + d);
    }
    out
}

fn phases_of(products: &[C64]) -> EchoPhases {
    let peak = products.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let reliable: Vec<bool> = products.iter().map(|p| peak > 0.0 && p.norm() >= RELIABILITY * peak).collect();
    // Unreliable points carry the previous phase forward so they cannot break the
    // unwrapping of their neighbours.
    let mut wrapped = Vec::with_capacity(products.len());
    for (p, ok) in products.iter().zip(&reliable) {
        let prev = wrapped.last().copied().unwrap_or(0.0);
        wrapped.push(if *ok { p.arg() } else { prev });
    }
    EchoPhases { products: products.to_vec(), unwrapped: unwrap_phase(&wrapped), reliable }
}

fn check_dims(shot: &ShotData, peer: &ShotData) -> Result<()> {
    if shot.samples.dim() != peer.samples.dim() || shot.timing.dim() != peer.timing.dim() {
        return Err(Error::InvalidInput(format!(
            "shot {} has shape {:?}, its peer {:?}",
            shot.shot_index,
            shot.samples.dim(),
            peer.samples.dim()
        )));
    }
    Ok(())
}

/// `p_m = sum_{k,c} conj(S_ref[m,k,c]) S[m,k,c]` and its unwrapped phase along `m`.
pub fn echo_phase_differences(shot: &ShotData, peer: &ShotData) -> Result<EchoPhases> {
    check_dims(shot, peer)?;
    let products: Vec<C64> = shot
        .samples
        .outer_iter()
        .zip(peer.samples.outer_iter())
        .map(|(s, r)| s.iter().zip(r.iter()).map(|(a, b)| b.conj() * a).sum())
        .collect();
    Ok(phases_of(&products))
}

/// Collapsed-trajectory variant: coil sums per sample in time order, smoothed by a
/// centered moving average of `window` samples (truncated at the ends). Returns the
/// phases and the matching sample times.
pub fn collapsed_phase_differences(shot: &ShotData, peer: &ShotData, window: usize) -> Result<(EchoPhases, Vec<f64>)> {
    check_dims(shot, peer)?;
    if window == 0 {
        return Err(Error::InvalidInput("moving-average window must be >= 1".into()));
    }
    let (nm, nk, _) = shot.samples.dim();
    let mut order: Vec<(usize, usize)> = (0..nm).flat_map(|m| (0..nk).map(move |k| (m, k))).collect();
    order.sort_by(|a, b| shot.timing[*a].total_cmp(&shot.timing[*b]));
    let raw: Vec<C64> = order
        .iter()
        .map(|&(m, k)| {
            let s = shot.samples.slice(ndarray::s![m, k, ..]);
            let r = peer.samples.slice(ndarray::s![m, k, ..]);
            s.iter().zip(r.iter()).map(|(a, b)| b.conj() * a).sum()
        })
        .collect();
    let times: Vec<f64> = order.iter().map(|mk| shot.timing[*mk]).collect();
    let n = raw.len();
    let mut prefix = vec![C64::new(0.0, 0.0); n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + raw[i];
    }
    let lo = (window - 1) / 2;
    let hi = window / 2;
    let smoothed: Vec<C64> = (0..n)
        .map(|i| {
            let a = i.saturating_sub(lo);
            let b = (i + hi + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect();
    Ok((phases_of(&smoothed), times))
}

/// OLS line through `(times, phases)`: returns `(slope, intercept at t = 0)`.
pub fn fit_shot_phase(phases: &[f64], times: &[f64]) -> Result<(f64, f64)> {
    let (slope, intercept, _) = line_fit(phases, times)?;
    Ok((slope, intercept))
}

fn line_fit(phases: &[f64], times: &[f64]) -> Result<(f64, f64, f64)> {
    if phases.len() != times.len() {
        return Err(Error::InvalidInput("phase and time arrays differ in length".into()));
    }
    if phases.len() < 2 {
        return Err(Error::InvalidInput("line fit needs at least two points".into()));
    }
    let n = phases.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let pm = phases.iter().sum::<f64>() / n;
    let stt: f64 = times.iter().map(|t| (t - tm) * (t - tm)).sum();
    if !(stt > 0.0) {
        return Err(Error::InvalidInput("line fit needs distinct times".into()));
    }
    let stp: f64 = times.iter().zip(phases).map(|(t, p)| (t - tm) * (p - pm)).sum();
    let slope = stp / stt;
    let intercept = pm - slope * tm;
    let rss: f64 = times.iter().zip(phases).map(|(t, p)| (p - intercept - slope * t).powi(2)).sum();
    Ok((slope, intercept, (rss / n).sqrt()))
}

struct Pass {
    slope: f64,
    intercept: f64,
    residual: f64,
    phases: Vec<f64>,
}

fn single_pass(shot: &ShotData, peer: &ShotData, mode: EqualizationMode) -> Result<Option<Pass>> {
    let (ph, times) = match mode {
        EqualizationMode::Epi => (echo_phase_differences(shot, peer)?, shot.echo_times()),
        EqualizationMode::Generic { window } => collapsed_phase_differences(shot, peer, window)?,
    };
    let (p, t): (Vec<f64>, Vec<f64>) = ph
        .unwrapped
        .iter()
        .zip(&times)
        .zip(&ph.reliable)
        .filter(|(_, ok)| **ok)
        .map(|((p, t), _)| (*p, *t))
        .unzip();
    if p.len() < 2 {
        return Ok(None);
    }
    let (slope, intercept, residual) = line_fit(&p, &t)?;
    Ok(Some(Pass { slope, intercept, residual, phases: ph.unwrapped }))
}

/// Multiplies every sample by `exp(-i (domega t + dphi))`, `t` since excitation.
pub fn apply_correction(shot: &ShotData, dphi: f64, domega: f64) -> ShotData {
    let mut out = shot.clone();
    for ((m, k), t) in shot.timing.indexed_iter() {
        let f = C64::from_polar(1.0, -(domega * t + dphi));
        out.samples.slice_mut(ndarray::s![m, k, ..]).mapv_inplace(|v| v * f);
    }
    out
}

/// Estimates and removes the phase/frequency offset of one shot relative to its peer.
pub fn equalize_shot(shot: &ShotData, peer: &ShotData, mode: EqualizationMode, time: f64) -> Result<(ShotData, ShotPhaseEstimate)> {
    let first = match single_pass(shot, peer, mode)? {
        Some(p) => p,
        None => {
            log::warn!("shot {}: fewer than two reliable echoes, left uncorrected", shot.shot_index);
            let est = ShotPhaseEstimate {
                shot_index: shot.shot_index,
                time,
                dphi: 0.0,
                domega: 0.0,
                fit_residual: 0.0,
                echo_phases: Vec::new(),
                skipped: true,
            };
            return Ok((shot.clone(), est));
        }
    };
    let t_max = shot.timing.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    let (mut w, mut p) = (first.slope, first.intercept);
    let mut residual = first.residual;
    let mut corrected = apply_correction(shot, p, w);
    for _ in 1..MAX_ITER {
        let Some(step) = single_pass(&corrected, peer, mode)? else { break };
        residual = step.residual;
        if (step.slope * t_max).abs() + step.intercept.abs() < 1e-14 {
            break;
        }
        w += step.slope;
        p += step.intercept;
        corrected = apply_correction(shot, p, w);
    }
    let est = ShotPhaseEstimate {
        shot_index: shot.shot_index,
        time,
        dphi: p,
        domega: w,
        fit_residual: residual,
        echo_phases: first.phases,
        skipped: false,
    };
    Ok((corrected, est))
}

/// Equalizes a whole scan in acquisition order. The first `nz` shots form the peer bank
/// and pass through untouched (their estimates are exactly zero); every later shot must
/// repeat the reference ordering.
pub fn equalize_scan(shots: &[ShotData], mode: EqualizationMode, nz: usize, tr: f64) -> Result<(Vec<ShotData>, Vec<ShotPhaseEstimate>)> {
    if let EqualizationMode::Generic { window: 0 } = mode {
        return Err(Error::Config("generic equalization window must be >= 1".into()));
    }
    let bank = PeerBank::from_first_volume(shots, nz)?;
    for (i, s) in shots.iter().enumerate() {
        let peer = bank.peer(i % nz);
        if s.kz_index != peer.kz_index || s.samples.dim() != peer.samples.dim() {
            return Err(Error::OrderingMismatch { shot: s.shot_index });
        }
    }
    let mut out = Vec::with_capacity(shots.len());
    let mut estimates = Vec::with_capacity(shots.len());
    out.extend_from_slice(&shots[..nz]);
    estimates.extend(shots[..nz].iter().map(|s| ShotPhaseEstimate {
        shot_index: s.shot_index,
        time: s.shot_index as f64 * tr,
        dphi: 0.0,
        domega: 0.0,
        fit_residual: 0.0,
        echo_phases: Vec::new(),
        skipped: false,
    }));
    for (i, s) in shots.iter().enumerate().skip(nz) {
        let (c, e) = equalize_shot(s, bank.peer(i % nz), mode, s.shot_index as f64 * tr)?;
        out.push(c);
        estimates.push(e);
    }
    Ok((out, estimates))
}

/// Writes `shot_index,time_s,dphi_rad,dfreq_hz,residual_rad`.
pub fn write_estimates_csv<W: std::io::Write>(estimates: &[ShotPhaseEstimate], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["shot_index", "time_s", "dphi_rad", "dfreq_hz", "residual_rad"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for e in estimates {
        wr.write_record([
            e.shot_index.to_string(),
            e.time.to_string(),
            e.dphi.to_string(),
            (e.domega / (2.0 * PI)).to_string(),
            e.fit_residual.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TimingConfig, Trajectory};
    use ndarray::{Array2, Array3};

    fn peer() -> ShotData {
        let t = TimingConfig { nm: 8, nk: 8, nc: 2, ..TimingConfig::desk() };
        let timing = Array2::from_shape_fn((8, 8), |(m, k)| t.sample_time(m, k));
        let traj = Trajectory::new(vec![[0.0; 3]; 64], timing.iter().copied().collect()).unwrap();
        ShotData {
            samples: Array3::from_shape_fn((8, 8, 2), |(m, k, c)| {
                C64::from_polar(1.0 + (m * k) as f64 * 0.3 + c as f64, 0.2 * k as f64 - 0.7 * m as f64 + c as f64)
            }),
            timing,
            kz_index: 0,
            volume_index: 0,
            shot_index: 0,
            trajectory: traj,
        }
    }

    fn perturbed(p: &ShotData, w: f64, phi: f64) -> ShotData {
        apply_correction(p, -phi, -w)
    }

    #[test]
    fn unwrap_keeps_steps_in_half_open_interval() {
        let truth: Vec<f64> = (0..20).map(|i| 2.5 * i as f64 - 1.0).collect();
        let wrapped: Vec<f64> = truth.iter().map(|p| C64::from_polar(1.0, *p).arg()).collect();
        let u = unwrap_phase(&wrapped);
        for (a, b) in u.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-12);
        }
        for w in u.windows(2) {
            let d = w[1] - w[0];
            assert!(d > -PI && d <= PI);
        }
    }

    #[test]
    fn identical_shot_gives_zero_phases() {
        let p = peer();
        let e = echo_phase_differences(&p, &p).unwrap();
        assert!(e.products.iter().all(|v| v.re > 0.0 && v.im == 0.0));
        assert!(e.unwrapped.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_phase_is_flat() {
        let p = peer();
        let e = echo_phase_differences(&perturbed(&p, 0.0, 0.9), &p).unwrap();
        assert!(e.unwrapped.iter().all(|v| (v - 0.9).abs() < 1e-12));
    }

    #[test]
    fn wrap_crossing_ramp_is_recovered() {
        let p = peer();
        let esp = p.echo_times()[1] - p.echo_times()[0];
        let w = 2.5 / esp;
        let e = echo_phase_differences(&perturbed(&p, w, 0.0), &p).unwrap();
        let (slope, _) = fit_shot_phase(&e.unwrapped, &p.echo_times()).unwrap();
        assert!(e.unwrapped.last().unwrap().abs() > PI);
        assert!(((slope - w) / w).abs() < 0.05, "{slope} vs {w}");
    }

    #[test]
    fn fit_examples() {
        let t = [0.01, 0.02, 0.03, 0.04];
        assert_eq!(fit_shot_phase(&[0.0; 4], &t).unwrap(), (0.0, 0.0));
        let w0 = 13.7;
        let ph: Vec<f64> = t.iter().map(|x| w0 * x).collect();
        let (s, i) = fit_shot_phase(&ph, &t).unwrap();
        assert!((s - w0).abs() < 1e-12 && i.abs() < 1e-12);
        assert!(fit_shot_phase(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn exact_restoration_and_idempotence() {
        let p = peer();
        for mode in [EqualizationMode::Epi, EqualizationMode::Generic { window: 8 }] {
            let s = perturbed(&p, 2.0 * PI * 7.0, 0.6);
            let (c, e) = equalize_shot(&s, &p, mode, 0.0).unwrap();
            let num: f64 = c.samples.iter().zip(p.samples.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = p.samples.iter().map(|b| b.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-9, "{mode:?}: {}", (num / den).sqrt());
            assert!((e.domega - 2.0 * PI * 7.0).abs() < 1e-6);
            let (_, again) = equalize_shot(&c, &p, mode, 0.0).unwrap();
            assert!(again.domega.abs() < 1e-6 && again.dphi.abs() < 1e-8);
        }
    }

    #[test]
    fn silent_shot_is_skipped() {
        let p = peer();
        let mut s = p.clone();
        s.samples.fill(C64::new(0.0, 0.0));
        let (c, e) = equalize_shot(&s, &p, EqualizationMode::Epi, 0.0).unwrap();
        assert!(e.skipped);
        assert_eq!(c, s);
    }

    #[test]
    fn ordering_mismatch_is_an_error() {
        let mut shots = Vec::new();
        for j in 0..4 {
            let mut s = peer();
            s.kz_index = j % 2;
            s.shot_index = j;
            shots.push(s);
        }
        assert!(equalize_scan(&shots, EqualizationMode::Epi, 2, 0.064).is_ok());
        shots[3].kz_index = 0;
        assert!(matches!(equalize_scan(&shots, EqualizationMode::Epi, 2, 0.064), Err(Error::OrderingMismatch { shot: 3 })));
    }

    #[test]
    fn estimates_csv_header() {
        let mut buf = Vec::new();
        write_estimates_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "shot_index,time_s,dphi_rad,dfreq_hz,residual_rad");
    }
}
