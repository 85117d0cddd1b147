use peers_core::equalize::{apply_correction, equalize_scan, EqualizationMode};
use peers_core::experiment::config::PoseSegment;
use peers_core::experiment::pipeline::relative_rmse;
use peers_core::experiment::stages::{self, load_report, record_failure, Manifest};
use peers_core::experiment::{compare_runs, process, run_experiment, simulate, CoilKind, Corrections, ExperimentConfig, Scenario};
use peers_core::navcorr::{apply_phase_correction, correct_translations, filter_trace, TimingMode, TraceFilter};
use peers_core::recon::realign::{estimate_shift, shift_volume};
use peers_core::servo::{ServoConfig, ServoMode};
use peers_core::Error;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn short(nvol: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.timing.nvol = nvol;
    cfg
}

fn servo(mode: ServoMode) -> ServoConfig {
    ServoConfig { mode, latency_shots: Some(5), ..Default::default() }
}

fn translation_step(mm: [f64; 3]) -> Scenario {
    Scenario::Schedule {
        poses: vec![
            PoseSegment { start_s: 0.0, angles_deg: [0.0; 3], translation_mm: [0.0; 3] },
            PoseSegment { start_s: 1.5, angles_deg: [0.0; 3], translation_mm: mm },
        ],
        frequency: vec![],
        phase: vec![],
        comb: None,
    }
}

#[test]
fn seeded_simulation_is_reproducible() {
    let cfg = ExperimentConfig { noise_std: 1.0, ..short(3) };
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert!(a.shots.iter().zip(&b.shots).all(|(x, y)| x.samples == y.samples));
    let c = simulate(&ExperimentConfig { seed: 2, ..cfg }).unwrap();
    assert!(a.shots.iter().zip(&c.shots).any(|(x, y)| x.samples != y.samples));
}

#[test]
fn equalization_recovers_injected_offsets() {
    let cfg = short(3);
    let raw = simulate(&cfg).unwrap();
    let nz = cfg.timing.nz;
    let inject = |i: usize| if i < nz { (0.0, 0.0) } else { (0.3 * (i as f64 * 0.7).sin(), TWO_PI * 2.5 * (i as f64 * 0.3).cos()) };
    let shots: Vec<_> = raw.shots.iter().enumerate().map(|(i, s)| {
        let (p, w) = inject(i);
        apply_correction(s, -p, -w)
    }).collect();
    let (fixed, est) = equalize_scan(&shots, EqualizationMode::Epi, nz, cfg.timing.tr).unwrap();
    assert_eq!(est.len(), shots.len());
    for (i, e) in est.iter().enumerate() {
        let (p, w) = inject(i);
        assert!((e.dphi - p).abs() < 1e-9 && (e.domega - w).abs() < 1e-7, "shot {i}: {e:?}");
    }
    for (f, s) in fixed.iter().zip(&raw.shots) {
        let d = (&f.samples - &s.samples).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(d < 1e-9);
    }
}

#[test]
fn equalization_rejects_reordered_scan() {
    let cfg = short(3);
    let mut shots = simulate(&cfg).unwrap().shots;
    shots.swap(17, 18);
    assert!(matches!(equalize_scan(&shots, EqualizationMode::Epi, cfg.timing.nz, cfg.timing.tr), Err(Error::OrderingMismatch { .. })));
}

#[test]
fn phase_correction_timing_origins() {
    let cfg = short(1);
    let shot = simulate(&cfg).unwrap().shots[3].clone();
    let (p, w, te) = (0.2, TWO_PI * 4.0, cfg.timing.te);
    let abs = apply_phase_correction(&shot, p, w, TimingMode::Absolute, te).unwrap();
    let rel = apply_phase_correction(&shot, p, w, TimingMode::Relative, te).unwrap();
    // The two origins differ by the constant phase domega * TE.
    let back = apply_correction(&rel, w * te, 0.0);
    let d = (&back.samples - &abs.samples).iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(d < 1e-12);
    let undone = apply_correction(&abs, -p, -w);
    assert!((&undone.samples - &shot.samples).iter().all(|v| v.norm() < 1e-12));
}

#[test]
fn median_filter_removes_isolated_spikes() {
    let mut trace: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
    trace[12] = 50.0;
    let f = filter_trace(&trace, TraceFilter::Median { window: 5 }).unwrap();
    assert!((f[12] - 1.2).abs() < 0.11);
    assert_eq!(filter_trace(&trace, TraceFilter::None).unwrap(), trace);
    assert!(filter_trace(&trace, TraceFilter::Median { window: 4 }).is_err());
}

#[test]
fn translation_round_trip() {
    let shot = simulate(&short(1)).unwrap().shots[0].clone();
    let t = [1e-3, -2e-3, 0.5e-3];
    let there = correct_translations(&shot, t).unwrap();
    let back = correct_translations(&there, [-t[0], -t[1], -t[2]]).unwrap();
    assert!((&back.samples - &shot.samples).iter().all(|v| v.norm() < 1e-12));
}

#[test]
fn oracle_translation_correction_restores_static_volumes() {
    let base = ExperimentConfig { coils: CoilKind::Uniform, ..short(3) };
    let moved = ExperimentConfig { scenario: translation_step([0.0, 1.0, 0.5]), ..base.clone() };
    let reference = run_experiment(&base).unwrap().series;
    let oracle = run_experiment(&ExperimentConfig { corrections: Corrections { servo: servo(ServoMode::Oracle), ..Default::default() }, ..moved.clone() }).unwrap();
    for (a, b) in reference.volumes.iter().zip(&oracle.series.volumes) {
        assert!(relative_rmse(a, b) < 1e-9);
    }
    // Without correction the realignment sees the step.
    let off = run_experiment(&moved).unwrap();
    let shifts = off.analysis.realign_shifts_mm.unwrap();
    let last = shifts.last().unwrap();
    assert!((last[1] - 1.0).abs() < 0.05 && (last[2] - 0.5).abs() < 0.05, "{last:?}");
}

#[test]
fn realignment_recovers_one_millimetre_shifts() {
    let series = run_experiment(&short(3)).unwrap().series;
    let v = &series.volumes[0];
    let vox = series.voxel_size;
    for axis in 0..3 {
        let mut s = [0.0; 3];
        s[axis] = 1e-3 / vox[axis];
        let moved = shift_volume(v, s.map(|x| -x));
        let est = estimate_shift(v, &moved).unwrap();
        assert!((est[axis] - s[axis]).abs() * vox[axis] < 0.05e-3, "axis {axis}: {est:?} vs {s:?}");
    }
}

#[test]
fn oracle_servo_holds_residual_outside_latency_windows() {
    let cfg = ExperimentConfig {
        scenario: Scenario::Schedule {
            poses: vec![
                PoseSegment { start_s: 0.0, angles_deg: [0.0; 3], translation_mm: [0.0; 3] },
                PoseSegment { start_s: 1.0, angles_deg: [1.0, 0.0, 0.0], translation_mm: [0.0; 3] },
                PoseSegment { start_s: 2.5, angles_deg: [0.0, -1.0, 0.5], translation_mm: [0.5, 0.0, 0.0] },
            ],
            frequency: vec![],
            phase: vec![],
            comb: None,
        },
        ..short(4)
    };
    // Estimated feedback keeps the one-shot linearization error of a 1.5 deg step
    // until the next updates mature.
    for (mode, tol) in [(ServoMode::Oracle, 1e-9), (ServoMode::On, 0.1)] {
        let run = run_experiment(&ExperimentConfig { corrections: Corrections { servo: servo(mode), ..Default::default() }, ..cfg.clone() }).unwrap();
        let s = run.analysis.report.servo;
        assert!(s.residual_max_outside_deg < tol, "{mode:?}: {s:?}");
        assert!(s.residual_max_in_windows_deg <= s.max_step_deg + tol, "{mode:?}: {s:?}");
    }
}

#[test]
fn staged_disk_run_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        noise_std: 0.5,
        scenario: Scenario::Drift { hz_per_min: 5.0 },
        corrections: Corrections { servo: servo(ServoMode::On), equalization: Some(EqualizationMode::Epi), ..Default::default() },
        ..short(3)
    };
    let on_disk = stages::run_all(&cfg, dir.path()).unwrap();
    let memory = process(&cfg, simulate(&cfg).unwrap()).unwrap().analysis.report;
    assert_eq!(on_disk, memory);
    assert_eq!(load_report(dir.path()).unwrap(), memory);
    let m = Manifest::load(dir.path()).unwrap();
    assert!(m.complete && m.error.is_none() && m.stages.len() == 4);
    assert_eq!(m.config, cfg);

    record_failure(dir.path(), &cfg, &Error::Format("broken".into())).unwrap();
    let m = Manifest::load(dir.path()).unwrap();
    assert!(!m.complete && m.error.as_deref().unwrap().contains("broken"));
}

#[test]
fn later_stage_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(stages::run_correct(&short(3), dir.path()).is_err());
}

#[test]
fn comparison_requires_matching_masks() {
    let a = run_experiment(&short(3)).unwrap().analysis.report;
    let b = run_experiment(&ExperimentConfig { corrections: Corrections { equalization: Some(EqualizationMode::Epi), ..Default::default() }, ..short(3) }).unwrap().analysis.report;
    let rows = compare_runs(&[a.clone(), b]).unwrap();
    assert_eq!(rows.len(), 2);
    let mut c = short(3);
    c.analysis.mask_fraction = 0.3;
    let other = run_experiment(&c).unwrap().analysis.report;
    assert!(compare_runs(&[a, other]).is_err());
}
