//! On-disk stage handoff. Layout below the output directory:
//!
//! ```text
//! config.toml  manifest.json
//! raw/        shots.*, navigators.*, truth.csv, nav_estimates.csv, nav_totals.csv,
//!             servo_applied.csv, servo.json
//! corrected/  shots.*, equalization.csv, corrections.json
//! recon/      volumes.*
//! analysis/   tsnr.csv, tsnr_realigned.csv, realign_shifts.csv, spectrum_nav.csv,
//!             spectrum_eq.csv, report.json
//! ```
//!
//! JSON sidecars keep exact floats; CSVs are for external tooling.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equalize::{write_estimates_csv, ShotPhaseEstimate};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::pipeline::{self, Analysis, CorrectedData, ExperimentReport, RawData};
use crate::io;
use crate::navigator::ParameterTrace;
use crate::recon::{Spectrum, TsnrMap, VolumeSeries};
use crate::sim::ShotTruth;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Correct,
    Reconstruct,
    Analyze,
}

impl Stage {
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Simulate => "raw",
            Stage::Correct => "corrected",
            Stage::Reconstruct => "recon",
            Stage::Analyze => "analysis",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub files: Vec<String>,
}

/// Run manifest: config echo, versions, seeds and the stages that completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub phantom_seed: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
    pub error: Option<String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            phantom_seed: cfg.phantom.seed,
            config: cfg.clone(),
            stages: Vec::new(),
            complete: false,
            error: None,
        }
    }

    pub fn load(out: &Path) -> Result<Self> {
        read_json(&out.join(MANIFEST))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST), self)
    }

    fn record(&mut self, stage: Stage, files: Vec<String>) {
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageRecord { stage, files });
        self.stages.sort_by_key(|s| s.stage as u8);
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn stage_dir(out: &Path, stage: Stage) -> Result<PathBuf> {
    let d = out.join(stage.dir());
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn listing(dir: &Path, stage: Stage) -> Result<Vec<String>> {
    let mut files: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| format!("{}/{}", stage.dir(), e.file_name().to_string_lossy()))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads the manifest if present (it must describe the same config), else starts one
/// and writes the config echo.
fn open_manifest(out: &Path, cfg: &ExperimentConfig) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    if out.join(MANIFEST).exists() {
        let m = Manifest::load(out)?;
        if m.config.seed == cfg.seed && m.config.scenario == cfg.scenario && m.config.timing == cfg.timing {
            let mut m = m;
            m.config = cfg.clone();
            return Ok(m);
        }
    }
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(Manifest::new(cfg))
}

fn finish(out: &Path, mut m: Manifest, stage: Stage) -> Result<()> {
    let dir = out.join(stage.dir());
    m.record(stage, listing(&dir, stage)?);
    m.complete = m.stages.len() == 4;
    m.error = None;
    m.save(out)
}

/// Marks the manifest as partial with the failing diagnostic.
pub fn record_failure(out: &Path, cfg: &ExperimentConfig, err: &Error) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut m = Manifest::load(out).unwrap_or_else(|_| Manifest::new(cfg));
    m.complete = false;
    m.error = Some(err.to_string());
    m.save(out)
}

#[derive(Serialize, Deserialize)]
struct ServoState {
    latency: usize,
    outliers: Vec<usize>,
    estimates: ParameterTrace,
    totals: ParameterTrace,
    applied: ParameterTrace,
    truth: Vec<ShotTruth>,
}

#[derive(Serialize, Deserialize)]
struct CorrectionState {
    equalization: Vec<ShotPhaseEstimate>,
    nav_phase: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn save_raw(dir: &Path, raw: &RawData) -> Result<()> {
    io::write_shots(dir, &raw.shots)?;
    io::write_navigators(dir, &raw.navigators)?;
    io::write_truth_csv(&raw.truth, create(&dir.join("truth.csv"))?)?;
    raw.estimates.write_csv(create(&dir.join("nav_estimates.csv"))?)?;
    raw.totals.write_csv(create(&dir.join("nav_totals.csv"))?)?;
    raw.applied.write_csv(create(&dir.join("servo_applied.csv"))?)?;
    write_json(
        &dir.join("servo.json"),
        &ServoState {
            latency: raw.latency,
            outliers: raw.outliers.clone(),
            estimates: raw.estimates.clone(),
            totals: raw.totals.clone(),
            applied: raw.applied.clone(),
            truth: raw.truth.clone(),
        },
    )
}

pub fn load_raw(dir: &Path) -> Result<RawData> {
    let s: ServoState = read_json(&dir.join("servo.json"))?;
    Ok(RawData {
        shots: io::read_shots(dir)?,
        navigators: io::read_navigators(dir)?,
        truth: s.truth,
        estimates: s.estimates,
        totals: s.totals,
        applied: s.applied,
        outliers: s.outliers,
        latency: s.latency,
    })
}

pub fn save_corrected(dir: &Path, c: &CorrectedData) -> Result<()> {
    io::write_shots(dir, &c.shots)?;
    write_estimates_csv(&c.equalization, create(&dir.join("equalization.csv"))?)?;
    write_json(
        &dir.join("corrections.json"),
        &CorrectionState { equalization: c.equalization.clone(), nav_phase: c.nav_phase.clone() },
    )
}

pub fn load_corrected(dir: &Path) -> Result<CorrectedData> {
    let s: CorrectionState = read_json(&dir.join("corrections.json"))?;
    Ok(CorrectedData { shots: io::read_shots(dir)?, equalization: s.equalization, nav_phase: s.nav_phase })
}

fn write_tsnr_csv(path: &Path, map: &TsnrMap) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(["x", "y", "z", "in_mask", "tsnr"]).map_err(|e| Error::Format(e.to_string()))?;
    for ((x, y, z), v) in map.map.indexed_iter() {
        let m = map.mask[(x, y, z)];
        wr.write_record([x.to_string(), y.to_string(), z.to_string(), (m as u8).to_string(), v.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

fn write_shifts_csv(path: &Path, shifts: &[[f64; 3]]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(["volume", "dx_mm", "dy_mm", "dz_mm"]).map_err(|e| Error::Format(e.to_string()))?;
    for (d, s) in shifts.iter().enumerate() {
        wr.write_record([d.to_string(), s[0].to_string(), s[1].to_string(), s[2].to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

fn write_spectrum(path: &Path, s: &Option<Spectrum>) -> Result<()> {
    match s {
        Some(s) => s.write_csv(create(path)?),
        None => Ok(()),
    }
}

pub fn save_analysis(dir: &Path, a: &Analysis) -> Result<()> {
    write_tsnr_csv(&dir.join("tsnr.csv"), &a.tsnr)?;
    if let Some(m) = &a.tsnr_realigned {
        write_tsnr_csv(&dir.join("tsnr_realigned.csv"), m)?;
    }
    if let Some(s) = &a.realign_shifts_mm {
        write_shifts_csv(&dir.join("realign_shifts.csv"), s)?;
    }
    write_spectrum(&dir.join("spectrum_nav.csv"), &a.nav_spectrum)?;
    write_spectrum(&dir.join("spectrum_eq.csv"), &a.eq_spectrum)?;
    write_json(&dir.join("report.json"), &a.report)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let p = if path.is_dir() { path.join(Stage::Analyze.dir()).join("report.json") } else { path.to_path_buf() };
    read_json(&p)
}

pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RawData> {
    let m = open_manifest(out, cfg)?;
    let raw = pipeline::simulate(cfg)?;
    save_raw(&stage_dir(out, Stage::Simulate)?, &raw)?;
    finish(out, m, Stage::Simulate)?;
    Ok(raw)
}

pub fn run_correct(cfg: &ExperimentConfig, out: &Path) -> Result<CorrectedData> {
    cfg.validate()?;
    let m = open_manifest(out, cfg)?;
    let raw = load_raw(&out.join(Stage::Simulate.dir()))?;
    let c = pipeline::correct(cfg, &raw)?;
    save_corrected(&stage_dir(out, Stage::Correct)?, &c)?;
    finish(out, m, Stage::Correct)?;
    Ok(c)
}

pub fn run_reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<VolumeSeries> {
    cfg.validate()?;
    let m = open_manifest(out, cfg)?;
    let shots = io::read_shots(&out.join(Stage::Correct.dir()))?;
    let series = pipeline::reconstruct(cfg, &shots)?;
    io::write_volumes(&stage_dir(out, Stage::Reconstruct)?.join("volumes"), &series)?;
    finish(out, m, Stage::Reconstruct)?;
    Ok(series)
}

pub fn run_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<Analysis> {
    cfg.validate()?;
    let m = open_manifest(out, cfg)?;
    let raw = load_raw(&out.join(Stage::Simulate.dir()))?;
    let corrected = load_corrected(&out.join(Stage::Correct.dir()))?;
    let series = io::read_volumes(&out.join(Stage::Reconstruct.dir()).join("volumes"))?;
    let a = pipeline::analyze(cfg, &raw, &corrected, &series)?;
    save_analysis(&stage_dir(out, Stage::Analyze)?, &a)?;
    finish(out, m, Stage::Analyze)?;
    Ok(a)
}

/// Every stage with on-disk handoff.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    run_simulate(cfg, out)?;
    run_correct(cfg, out)?;
    run_reconstruct(cfg, out)?;
    Ok(run_analyze(cfg, out)?.report)
}
