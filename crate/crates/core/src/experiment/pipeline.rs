//! Staged experiment: simulate (with the servo loop) -> correct -> reconstruct -> analyze.
//! Each stage is a pure function of its inputs so downstream stages can be re-run on
//! the same raw data.

use serde::{Deserialize, Serialize};

use crate::equalize::{equalize_scan, ShotPhaseEstimate};
use crate::error::{Error, Result};
use crate::experiment::config::{CoilKind, ExperimentConfig, StageOrder};
use crate::navcorr::{correct_scan, correct_translations, filter_trace};
use crate::navigator::{make_orbital_trajectory, ParameterTrace};
use crate::recon::tsnr::TsnrSummary;
use crate::recon::{mask_above, realign_translations, reconstruct_series, trace_spectrum, tsnr, CombPeak, Spectrum, TsnrMap, VolumeSeries};
use crate::servo::{residual_rotation, ControllerState, ServoMode};
use crate::sim::scan::kz_fraction;
use crate::sim::{run_scan, CoilSet, DigitalPhantom, ForwardModel, NavigatorSignal, ShotData, ShotTruth};
use crate::C64;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Acquisition output, including what the servo saw and did.
#[derive(Clone, Debug)]
pub struct RawData {
    pub shots: Vec<ShotData>,
    pub navigators: Vec<NavigatorSignal>,
    pub truth: Vec<ShotTruth>,
    pub estimates: ParameterTrace,
    pub totals: ParameterTrace,
    pub applied: ParameterTrace,
    pub outliers: Vec<usize>,
    pub latency: usize,
}

#[derive(Clone, Debug)]
pub struct CorrectedData {
    pub shots: Vec<ShotData>,
    pub equalization: Vec<ShotPhaseEstimate>,
    /// Filtered navigator phase (rad) and frequency (rad/s) actually applied, per shot.
    pub nav_phase: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServoSummary {
    pub mode: ServoMode,
    pub latency_shots: usize,
    /// Residual object rotation relative to the EPI geometry, outside the latency
    /// windows that follow each pose change.
    pub residual_rmse_deg: f64,
    pub residual_max_outside_deg: f64,
    pub residual_max_in_windows_deg: f64,
    /// Largest pose change between consecutive shots.
    pub max_step_deg: f64,
    pub outliers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualizationSummary {
    /// RMS of estimated minus scripted frequency offset to the peer shot.
    pub freq_rmse_hz: f64,
    pub max_abs_freq_hz: f64,
    pub mean_fit_residual_rad: f64,
    pub skipped: usize,
    pub comb_peaks: Vec<CombPeak>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub scenario: String,
    pub corrections: String,
    pub seed: u64,
    pub noise_std: f64,
    pub volumes: usize,
    pub shots: usize,
    pub dims: [usize; 3],
    pub mask_fraction: f64,
    pub mask_voxels: usize,
    /// Order-sensitive checksum of the mask, for comparing runs.
    pub mask_checksum: u64,
    pub tsnr: TsnrSummary,
    pub tsnr_realigned: Option<TsnrSummary>,
    pub max_realign_shift_mm: Option<f64>,
    pub servo: ServoSummary,
    /// Navigator frequency minus truth, RMS after removing the mean offset.
    pub nav_freq_rmse_hz: f64,
    pub nav_comb_peaks: Vec<CombPeak>,
    pub equalization: Option<EqualizationSummary>,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub report: ExperimentReport,
    pub tsnr: TsnrMap,
    pub tsnr_realigned: Option<TsnrMap>,
    pub realign_shifts_mm: Option<Vec<[f64; 3]>>,
    pub nav_spectrum: Option<Spectrum>,
    pub eq_spectrum: Option<Spectrum>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub raw: RawData,
    pub corrected: CorrectedData,
    pub series: VolumeSeries,
    pub analysis: Analysis,
}

pub fn build_phantom(cfg: &ExperimentConfig) -> Result<DigitalPhantom> {
    DigitalPhantom::ellipsoid_with_inclusions(&cfg.phantom)
}

pub fn build_coils(cfg: &ExperimentConfig) -> CoilSet {
    match cfg.coils {
        CoilKind::Analytic => CoilSet::analytic(cfg.timing.nc),
        CoilKind::Uniform => CoilSet::uniform(cfg.timing.nc),
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<RawData> {
    cfg.validate()?;
    let model = ForwardModel::new(build_phantom(cfg)?, build_coils(cfg))?;
    let nav = make_orbital_trajectory(cfg.navigator.knav, cfg.timing.tnav, cfg.navigator.samples_per_orbit)?
        .delayed(cfg.timing.nav_start);
    let mut ctl = ControllerState::new(&cfg.corrections.servo, &cfg.timing)?;
    let record = run_scan(&model, &cfg.script(), &cfg.timing, &nav, Some(&mut ctl))?;
    log::info!("simulated {} shots ({} volumes)", record.shots.len(), cfg.timing.nvol);
    Ok(RawData {
        shots: record.shots,
        navigators: record.navigators,
        truth: record.truth,
        latency: ctl.latency(),
        estimates: ctl.estimates,
        totals: ctl.totals,
        applied: ctl.applied_trace,
        outliers: ctl.outliers,
    })
}

fn remove_true_phase(cfg: &ExperimentConfig, shot: &ShotData) -> ShotData {
    let script = cfg.script();
    let tau = shot.shot_index as f64 * cfg.timing.tr;
    let kz = kz_fraction(shot.kz_index, cfg.timing.nz);
    let t_ro = cfg.timing.readout_start();
    let mut out = shot.clone();
    for ((m, k), t) in shot.timing.indexed_iter() {
        let f = C64::from_polar(1.0, -script.accrued_phase(tau, *t, t_ro, kz));
        out.samples.slice_mut(ndarray::s![m, k, ..]).mapv_inplace(|v| v * f);
    }
    out
}

/// Retrospective corrections on raw data. Translations tracked by the servo are
/// removed first (the servo only steers rotations into the readout geometry).
pub fn correct(cfg: &ExperimentConfig, raw: &RawData) -> Result<CorrectedData> {
    let c = &cfg.corrections;
    let n = raw.shots.len();
    if raw.totals.len() != n || raw.truth.len() != n {
        return Err(Error::InvalidInput("servo traces do not cover every shot".into()));
    }
    let mut shots: Vec<ShotData> = match c.servo.mode {
        ServoMode::Off => raw.shots.clone(),
        ServoMode::On => raw
            .shots
            .iter()
            .zip(&raw.totals.pose)
            .map(|(s, p)| correct_translations(s, p.translation_vec().into()))
            .collect::<Result<_>>()?,
        ServoMode::Oracle => raw
            .shots
            .iter()
            .zip(&raw.truth)
            .map(|(s, t)| correct_translations(s, t.object_pose_epi.translation_vec().into()))
            .collect::<Result<_>>()?,
    };
    if c.oracle_phase {
        shots = shots.iter().map(|s| remove_true_phase(cfg, s)).collect();
    }
    let mut equalization = Vec::new();
    let mut nav_phase = None;
    let run_nav = |shots: &[ShotData], nav_phase: &mut Option<(Vec<f64>, Vec<f64>)>| -> Result<Vec<ShotData>> {
        match &c.nav_phase {
            None => Ok(shots.to_vec()),
            Some(nc) => {
                let out = correct_scan(shots, &raw.totals.phase, &raw.totals.frequency, nc, cfg.timing.te)?;
                *nav_phase = Some((filter_trace(&raw.totals.phase, nc.filter)?, filter_trace(&raw.totals.frequency, nc.filter)?));
                Ok(out)
            }
        }
    };
    let run_eq = |shots: Vec<ShotData>, eq: &mut Vec<ShotPhaseEstimate>| -> Result<Vec<ShotData>> {
        match c.equalization {
            None => Ok(shots),
            Some(mode) => {
                let (out, est) = equalize_scan(&shots, mode, cfg.timing.nz, cfg.timing.tr)?;
                *eq = est;
                Ok(out)
            }
        }
    };
    shots = match c.order {
        StageOrder::NavigatorFirst => {
            let s = run_nav(&shots, &mut nav_phase)?;
            run_eq(s, &mut equalization)?
        }
        StageOrder::EqualizationFirst => {
            let s = run_eq(shots, &mut equalization)?;
            run_nav(&s, &mut nav_phase)?
        }
    };
    Ok(CorrectedData { shots, equalization, nav_phase })
}

pub fn reconstruct(cfg: &ExperimentConfig, shots: &[ShotData]) -> Result<VolumeSeries> {
    let voxel = cfg.phantom.voxel_mm.map(|v| v * 1e-3);
    reconstruct_series(shots, &build_coils(cfg), cfg.phantom.dims, voxel, cfg.timing.tr)
}

/// Analysis mask from the noise-free phantom magnitude.
pub fn analysis_mask(cfg: &ExperimentConfig) -> Result<ndarray::Array3<bool>> {
    let ph = build_phantom(cfg)?;
    Ok(mask_above(&ph.values().mapv(|v| v.norm()), cfg.analysis.mask_fraction))
}

pub fn mask_checksum(mask: &ndarray::Array3<bool>) -> u64 {
    mask.iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .fold(0xcbf2_9ce4_8422_2325u64, |h, (i, _)| (h ^ i as u64).wrapping_mul(0x0100_0000_01b3))
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Shots whose EPI sees a different object pose than the navigator `latency` shots
/// earlier, i.e. pose changes the loop could not have corrected yet. Includes the
/// shot a step lands in when it falls between navigator and readout.
pub fn latency_windows(truth: &[ShotTruth], latency: usize) -> Vec<bool> {
    (0..truth.len())
        .map(|j| {
            let seen = truth[j.saturating_sub(latency)].object_pose_nav;
            let d = seen.inverse().compose(&truth[j].object_pose_epi);
            d.rotation_angle() > 1e-12 || d.translation_norm() > 1e-12
        })
        .collect()
}

fn servo_summary(cfg: &ExperimentConfig, raw: &RawData) -> ServoSummary {
    let res: Vec<f64> = residual_rotation(&raw.truth).into_iter().map(f64::to_degrees).collect();
    let win = latency_windows(&raw.truth, raw.latency);
    let outside = res.iter().zip(&win).filter(|(_, w)| !**w).map(|(r, _)| *r);
    let max_step = raw
        .truth
        .windows(2)
        .map(|w| w[0].object_pose_epi.inverse().compose(&w[1].object_pose_epi).rotation_angle().to_degrees())
        .fold(0.0, f64::max);
    ServoSummary {
        mode: cfg.corrections.servo.mode,
        latency_shots: raw.latency,
        residual_rmse_deg: rms(outside.clone()),
        residual_max_outside_deg: outside.fold(0.0, f64::max),
        residual_max_in_windows_deg: res.iter().zip(&win).filter(|(_, w)| **w).map(|(r, _)| *r).fold(0.0, f64::max),
        max_step_deg: max_step,
        outliers: raw.outliers.len(),
    }
}

/// Scripted frequency offset (Hz) of each shot to its peer that equalization should
/// see, given what ran before it.
pub fn equalization_truth_hz(cfg: &ExperimentConfig, raw: &RawData, corrected: &CorrectedData) -> Vec<f64> {
    let nz = cfg.timing.nz;
    if cfg.corrections.oracle_phase {
        return vec![0.0; raw.truth.len()];
    }
    let prior = match (&corrected.nav_phase, cfg.corrections.order) {
        (Some((_, w)), StageOrder::NavigatorFirst) => w.clone(),
        _ => vec![0.0; raw.truth.len()],
    };
    raw.truth
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let p = j % nz;
            ((t.omega - raw.truth[p].omega) - (prior[j] - prior[p])) / TWO_PI
        })
        .collect()
}

pub fn analyze(cfg: &ExperimentConfig, raw: &RawData, corrected: &CorrectedData, series: &VolumeSeries) -> Result<Analysis> {
    let mask = analysis_mask(cfg)?;
    let map = tsnr(series, &mask)?;
    let (realigned, shifts) = if cfg.analysis.realign {
        let (s, sh) = realign_translations(series)?;
        (Some(tsnr(&s, &mask)?), Some(sh))
    } else {
        (None, None)
    };
    let tr = cfg.timing.tr;
    let tvol = cfg.timing.tvol;
    let spec = |v: &[f64]| -> Option<Spectrum> {
        match trace_spectrum(v, tr, tvol, &cfg.analysis.spectrum) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("spectrum skipped: {e}");
                None
            }
        }
    };
    let nav_hz = raw.totals.frequency_hz();
    let nav_spectrum = spec(&nav_hz);
    let truth_hz: Vec<f64> = raw.truth.iter().map(|t| t.omega / TWO_PI).collect();
    let diff: Vec<f64> = nav_hz.iter().zip(&truth_hz).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / diff.len().max(1) as f64;
    let nav_freq_rmse_hz = rms(diff.iter().map(|d| d - mean));

    let (eq_spectrum, equalization) = if corrected.equalization.is_empty() {
        (None, None)
    } else {
        let est: Vec<f64> = corrected.equalization.iter().map(|e| e.domega / TWO_PI).collect();
        let truth = equalization_truth_hz(cfg, raw, corrected);
        let s = spec(&est);
        let summary = EqualizationSummary {
            freq_rmse_hz: rms(est.iter().zip(&truth).map(|(a, b)| a - b)),
            max_abs_freq_hz: est.iter().fold(0.0, |a, v| a.max(v.abs())),
            mean_fit_residual_rad: corrected.equalization.iter().map(|e| e.fit_residual).sum::<f64>() / est.len() as f64,
            skipped: corrected.equalization.iter().filter(|e| e.skipped).count(),
            comb_peaks: s.as_ref().map(|s| s.peaks.clone()).unwrap_or_default(),
        };
        (s, Some(summary))
    };
    let report = ExperimentReport {
        name: cfg.name.clone(),
        scenario: cfg.scenario.name().into(),
        corrections: cfg.corrections.label(),
        seed: cfg.seed,
        noise_std: cfg.noise_std,
        volumes: series.len(),
        shots: raw.shots.len(),
        dims: series.dims(),
        mask_fraction: cfg.analysis.mask_fraction,
        mask_voxels: mask.iter().filter(|m| **m).count(),
        mask_checksum: mask_checksum(&mask),
        tsnr: map.summary(),
        tsnr_realigned: realigned.as_ref().map(TsnrMap::summary),
        max_realign_shift_mm: shifts
            .as_ref()
            .map(|s| s.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).fold(0.0, f64::max)),
        servo: servo_summary(cfg, raw),
        nav_freq_rmse_hz,
        nav_comb_peaks: nav_spectrum.as_ref().map(|s| s.peaks.clone()).unwrap_or_default(),
        equalization,
    };
    Ok(Analysis { report, tsnr: map, tsnr_realigned: realigned, realign_shifts_mm: shifts, nav_spectrum, eq_spectrum })
}

/// Every stage in memory, without touching the disk.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let raw = simulate(cfg)?;
    process(cfg, raw)
}

/// Downstream stages on existing raw data; `cfg.corrections.servo` must describe how
/// `raw` was acquired.
pub fn process(cfg: &ExperimentConfig, raw: RawData) -> Result<RunOutput> {
    let corrected = correct(cfg, &raw)?;
    let series = reconstruct(cfg, &corrected.shots)?;
    let analysis = analyze(cfg, &raw, &corrected, &series)?;
    Ok(RunOutput { raw, corrected, series, analysis })
}

/// Mean over mask voxels of the temporal std (N - 1) of the magnitude.
pub fn mean_temporal_std(series: &VolumeSeries, mask: &ndarray::Array3<bool>) -> f64 {
    let n = series.len() as f64;
    let mags = series.magnitudes();
    let (mut acc, mut count) = (0.0, 0usize);
    for (idx, m) in mask.indexed_iter() {
        if !*m {
            continue;
        }
        let mean = mags.iter().map(|v| v[idx]).sum::<f64>() / n;
        let var = mags.iter().map(|v| (v[idx] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        acc += var.sqrt();
        count += 1;
    }
    acc / count.max(1) as f64
}

/// Relative RMSE of `b` against `a`.
pub fn relative_rmse(a: &ndarray::Array3<C64>, b: &ndarray::Array3<C64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    (num / den).sqrt()
}

