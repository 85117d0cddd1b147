//! Shot-by-shot acquisition loop: navigator, optional controller feedback, EPI readout.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Lattice, RigidPose, TimingConfig, Trajectory};
use crate::sim::encode::{synthesize_with_phase, ForwardModel, NoiseSource};
use crate::sim::script::PerturbationScript;
use crate::C64;

/// One EPI segment: `samples[m, k, c]` in acquisition order (echo `m`, readout sample `k`).
#[derive(Clone, Debug, PartialEq)]
pub struct ShotData {
    pub samples: Array3<C64>,
    /// Time since excitation of every sample (s), shape `(nm, nk)`.
    pub timing: Array2<f64>,
    pub kz_index: usize,
    pub volume_index: usize,
    pub shot_index: usize,
    /// Trajectory actually played, flattened in `(m, k)` order.
    pub trajectory: Trajectory,
}

impl ShotData {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.samples.dim()
    }

    /// Echo center times: mean sample time per echo.
    pub fn echo_times(&self) -> Vec<f64> {
        self.timing.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavigatorSignal {
    /// `(n_nav, coils)`.
    pub samples: Array2<C64>,
    /// Played trajectory (after any gradient rotation).
    pub trajectory: Trajectory,
    pub tnav: f64,
}

/// Ground truth for one shot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotTruth {
    pub shot_index: i64,
    /// Excitation time (s).
    pub time: f64,
    pub object_pose_nav: RigidPose,
    pub object_pose_epi: RigidPose,
    pub scanner_pose_nav: RigidPose,
    pub scanner_pose_epi: RigidPose,
    /// Global phase at excitation (rad).
    pub phase: f64,
    /// Global off-resonance at excitation (rad/s).
    pub omega: f64,
}

/// Run-time geometry feedback. The scan asks for the navigator geometry, plays the
/// navigator, and hands it back; the returned pose sets the EPI gradient rotation.
/// Warm-up shots have negative indices.
pub trait ScanController {
    fn navigator_geometry(&mut self, j: i64) -> RigidPose;
    fn on_navigator(&mut self, j: i64, nav: &NavigatorSignal, truth: &ShotTruth) -> Result<RigidPose>;
}

#[derive(Clone, Debug, Default)]
pub struct ScanRecord {
    pub navigators: Vec<NavigatorSignal>,
    pub shots: Vec<ShotData>,
    pub truth: Vec<ShotTruth>,
}

/// kx lattice index of readout sample `k` on echo `m`; odd echoes run backwards.
pub fn epi_kx_index(m: usize, k: usize, nk: usize) -> usize {
    if m % 2 == 0 {
        k
    } else {
        nk - 1 - k
    }
}

/// Signed slice-encode position `kz / kz_max` of segment `l`.
pub fn kz_fraction(l: usize, nz: usize) -> f64 {
    (l as f64 - (nz / 2) as f64) / (nz / 2) as f64
}

/// Nominal Cartesian EPI trajectory for slice encode `l`.
pub fn epi_trajectory(timing: &TimingConfig, dk: [f64; 3], l: usize) -> Result<Trajectory> {
    let (nm, nk) = (timing.nm, timing.nk);
    let kz = (l as f64 - (timing.nz / 2) as f64) * dk[2];
    let origin = [-((nk / 2) as f64) * dk[0], -((nm / 2) as f64) * dk[1], kz];
    let mut coords = Vec::with_capacity(nm * nk);
    let mut times = Vec::with_capacity(nm * nk);
    let mut index = Vec::with_capacity(nm * nk);
    for m in 0..nm {
        for k in 0..nk {
            let a = epi_kx_index(m, k, nk);
            coords.push([origin[0] + a as f64 * dk[0], origin[1] + m as f64 * dk[1], kz]);
            times.push(timing.sample_time(m, k));
            index.push([a, m]);
        }
    }
    let lattice = Lattice { origin, step_u: [dk[0], 0.0, 0.0], step_v: [0.0, dk[1], 0.0], shape: [nk, nm], index };
    Trajectory::new(coords, times)?.with_lattice(lattice)
}

fn check_dims(model: &ForwardModel, timing: &TimingConfig) -> Result<()> {
    let d = model.phantom().dims();
    if [timing.nk, timing.nm, timing.nz] != d {
        return Err(Error::Config(format!(
            "encoding matrix {}x{}x{} does not match phantom grid {:?}",
            timing.nk, timing.nm, timing.nz, d
        )));
    }
    if timing.nc != model.num_coils() {
        return Err(Error::Config(format!("timing expects {} coils, model has {}", timing.nc, model.num_coils())));
    }
    Ok(())
}

/// Acquires the whole scan: warm-up shots (navigator only) followed by `nvol` volumes
/// with linear kz ordering. `nav_traj` holds navigator times since excitation.
pub fn run_scan(
    model: &ForwardModel,
    script: &PerturbationScript,
    timing: &TimingConfig,
    nav_traj: &Trajectory,
    mut controller: Option<&mut dyn ScanController>,
) -> Result<ScanRecord> {
    timing.validate()?;
    script.validate()?;
    check_dims(model, timing)?;
    let dk = model.phantom().k_step();
    let epi: Vec<Trajectory> = (0..timing.nz).map(|l| epi_trajectory(timing, dk, l)).collect::<Result<_>>()?;
    let mut noise = NoiseSource::new(script.noise_std, ChaCha8Rng::seed_from_u64(script.seed))?;
    let t_ro = timing.readout_start();
    let nav_mid = 0.5 * (nav_traj.times()[0] + nav_traj.times()[nav_traj.len() - 1]);
    let warmup = (timing.warmup_volumes * timing.nz) as i64;
    let total = timing.total_shots();
    let mut record = ScanRecord {
        navigators: Vec::with_capacity(total),
        shots: Vec::with_capacity(total),
        truth: Vec::with_capacity(total),
    };
    let timing_grid = Array2::from_shape_fn((timing.nm, timing.nk), |(m, k)| timing.sample_time(m, k));

    for j in -warmup..total as i64 {
        let tau = j as f64 * timing.tr;
        let l = j.rem_euclid(timing.nz as i64) as usize;
        let kz_frac = kz_fraction(l, timing.nz);
        let scanner_nav = match controller.as_deref_mut() {
            Some(c) => c.navigator_geometry(j),
            None => RigidPose::identity(),
        };
        if !scanner_nav.is_finite() {
            return Err(Error::NonFinite(format!("controller geometry at shot {j}")));
        }
        let mut truth = ShotTruth {
            shot_index: j,
            time: tau,
            object_pose_nav: script.pose_at(tau + nav_mid),
            object_pose_epi: script.pose_at(tau + timing.te),
            scanner_pose_nav: scanner_nav,
            scanner_pose_epi: RigidPose::identity(),
            phase: script.phase_at(tau),
            omega: script.omega_at(tau),
        };
        let played_nav = nav_traj.rotated(&scanner_nav);
        let psi: Vec<f64> = played_nav.times().iter().map(|&t| script.accrued_phase(tau, t, t_ro, kz_frac)).collect();
        let nav_samples = synthesize_with_phase(model, &played_nav, &truth.object_pose_nav, &psi, Some(&mut noise))?;
        let nav = NavigatorSignal { samples: nav_samples, trajectory: played_nav, tnav: timing.tnav };
        let scanner_epi = match controller.as_deref_mut() {
            Some(c) => c.on_navigator(j, &nav, &truth)?,
            None => RigidPose::identity(),
        };
        if !scanner_epi.is_finite() {
            return Err(Error::NonFinite(format!("controller correction at shot {j}")));
        }
        truth.scanner_pose_epi = scanner_epi;
        if j < 0 {
            continue;
        }
        let played = epi[l].rotated(&scanner_epi);
        let psi: Vec<f64> = played.times().iter().map(|&t| script.accrued_phase(tau, t, t_ro, kz_frac)).collect();
        let flat = synthesize_with_phase(model, &played, &truth.object_pose_epi, &psi, Some(&mut noise))?;
        let samples = flat
            .into_shape_with_order((timing.nm, timing.nk, timing.nc))
            .map_err(|e| Error::Format(e.to_string()))?;
        let ju = j as usize;
        record.shots.push(ShotData {
            samples,
            timing: timing_grid.clone(),
            kz_index: l,
            volume_index: ju / timing.nz,
            shot_index: ju,
            trajectory: played,
        });
        record.navigators.push(nav);
        record.truth.push(truth);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epi_timing_increases_and_center_at_te() {
        let t = TimingConfig::desk();
        let traj = epi_trajectory(&t, [1.0, 1.0, 1.0], 3).unwrap();
        assert_eq!(traj.len(), t.nm * t.nk);
        let center = (t.nm / 2) * t.nk + t.nk / 2;
        assert!((traj.times()[center] - t.te).abs() < 1e-15);
        // Echo nm/2 is even, so its center sample sits at kx = 0.
        assert_eq!(traj.coords()[center][0], 0.0);
        assert_eq!(traj.coords()[center][1], 0.0);
    }

    #[test]
    fn odd_echoes_reverse() {
        assert_eq!(epi_kx_index(0, 0, 32), 0);
        assert_eq!(epi_kx_index(1, 0, 32), 31);
        assert_eq!(kz_fraction(0, 16), -1.0);
        assert_eq!(kz_fraction(8, 16), 0.0);
    }
}
