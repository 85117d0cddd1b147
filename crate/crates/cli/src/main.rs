//! `peers` command line: staged simulation, correction, reconstruction and analysis.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use peers_core::equalize::EqualizationMode;
use peers_core::experiment::stages::{self, record_failure};
use peers_core::experiment::{compare_runs, write_comparison_csv, ExperimentConfig};
use peers_core::navcorr::{PhaseCorrectionConfig, TimingMode, TraceFilter};
use peers_core::servo::ServoMode;
use peers_core::Error;

#[derive(Parser)]
#[command(name = "peers", version, about = "Navigator servo and peer-shot phase equalization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate raw shots, navigators and the servo loop.
    Simulate(RunArgs),
    /// Apply translation, navigator phase and equalization corrections.
    Correct(RunArgs),
    /// Reconstruct the corrected shots into volumes.
    Reconstruct(RunArgs),
    /// tSNR, realignment, spectra and the run report.
    Analyze(RunArgs),
    /// All four stages.
    All(RunArgs),
    /// Tabulate reports from several runs; they must share the analysis mask.
    Compare {
        /// Run directories or report.json files.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Servo {
    Off,
    On,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum NavFilter {
    None,
    Raw,
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum NavTiming {
    Absolute,
    Relative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Equalization {
    None,
    Epi,
    Generic,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Complex noise std per sample.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    nvol: Option<usize>,
    /// Scenario as `kind[,key=value...]`, e.g. `drift,hz_per_min=5` or `shifts,axis=y`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_enum)]
    servo: Option<Servo>,
    #[arg(long)]
    latency: Option<usize>,
    /// Navigator phase correction filter; `none` disables the stage.
    #[arg(long, value_enum)]
    nav_filter: Option<NavFilter>,
    #[arg(long, default_value_t = 9)]
    median_window: usize,
    #[arg(long, value_enum)]
    nav_timing: Option<NavTiming>,
    #[arg(long, value_enum)]
    equalization: Option<Equalization>,
    #[arg(long, default_value_t = 32)]
    generic_window: usize,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(Error) -> Failure {
    move |e| Failure { code: if matches!(e, Error::Config(_)) { 2 } else { code }, err: e.into() }
}

fn config_error(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn parse_scenario(arg: &str) -> anyhow::Result<peers_core::experiment::Scenario> {
    let mut parts = arg.split(',');
    let kind = parts.next().unwrap_or_default().trim();
    let mut text = format!("[scenario]\nkind = \"{kind}\"\n");
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("scenario field `{kv}` is not key=value"))?;
        let v = v.trim();
        let literal = v.parse::<f64>().is_ok() || v == "true" || v == "false" || v.starts_with('[');
        if literal {
            text.push_str(&format!("{} = {v}\n", k.trim()));
        } else {
            text.push_str(&format!("{} = \"{v}\"\n", k.trim()));
        }
    }
    Ok(ExperimentConfig::from_toml_str(&text).with_context(|| format!("scenario `{arg}`"))?.scenario)
}

fn build_config(a: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.noise_std = n;
    }
    if let Some(n) = a.nvol {
        cfg.timing.nvol = n;
    }
    if let Some(s) = &a.scenario {
        cfg.scenario = parse_scenario(s)?;
    }
    if let Some(o) = &a.output {
        cfg.output_dir = Some(o.clone());
    }
    let c = &mut cfg.corrections;
    if let Some(s) = a.servo {
        c.servo.mode = match s {
            Servo::Off => ServoMode::Off,
            Servo::On => ServoMode::On,
            Servo::Oracle => ServoMode::Oracle,
        };
    }
    if a.latency.is_some() {
        c.servo.latency_shots = a.latency;
    }
    match a.nav_filter {
        Some(NavFilter::None) => c.nav_phase = None,
        Some(f) => {
            let filter = match f {
                NavFilter::Median => TraceFilter::Median { window: a.median_window },
                _ => TraceFilter::None,
            };
            c.nav_phase = Some(PhaseCorrectionConfig { filter, ..c.nav_phase.unwrap_or_default() });
        }
        None => {}
    }
    if let (Some(t), Some(n)) = (a.nav_timing, c.nav_phase.as_mut()) {
        n.timing = match t {
            NavTiming::Absolute => TimingMode::Absolute,
            NavTiming::Relative => TimingMode::Relative,
        };
    }
    if let Some(e) = a.equalization {
        c.equalization = match e {
            Equalization::None => None,
            Equalization::Epi => Some(EqualizationMode::Epi),
            Equalization::Generic => Some(EqualizationMode::Generic { window: a.generic_window }),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

fn run_stages(cmd: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let simulate = || stages::run_simulate(cfg, out).map(drop).map_err(fail(3));
    let correct = || stages::run_correct(cfg, out).map(drop).map_err(fail(4));
    let reconstruct = || stages::run_reconstruct(cfg, out).map(drop).map_err(fail(4));
    let analyze = || {
        let a = stages::run_analyze(cfg, out).map_err(fail(5))?;
        let r = &a.report;
        println!("{}", summary_line(r));
        Ok(())
    };
    match cmd {
        Command::Simulate(_) => simulate(),
        Command::Correct(_) => correct(),
        Command::Reconstruct(_) => reconstruct(),
        Command::Analyze(_) => analyze(),
        Command::All(_) => {
            simulate()?;
            correct()?;
            reconstruct()?;
            analyze()
        }
        Command::Compare { .. } => unreachable!(),
    }
}

fn summary_line(r: &peers_core::experiment::ExperimentReport) -> String {
    format!(
        "{}: tsnr_mean={:.3} tsnr_realigned={} residual_rotation_rmse_deg={:.4}",
        r.name,
        r.tsnr.mean,
        r.tsnr_realigned.as_ref().map_or("n/a".into(), |t| format!("{:.3}", t.mean)),
        r.servo.residual_rmse_deg
    )
}

fn compare(runs: &[PathBuf], output: Option<&Path>) -> Result<(), Failure> {
    let reports = runs
        .iter()
        .map(|p| stages::load_report(p).map_err(|e| Failure { code: 5, err: anyhow!("{}: {e}", p.display()) }))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare_runs(&reports).map_err(fail(5))?;
    let written = match output {
        Some(p) => std::fs::File::create(p).map_err(Error::from).and_then(|f| write_comparison_csv(&rows, std::io::BufWriter::new(f))),
        None => write_comparison_csv(&rows, std::io::stdout().lock()),
    };
    written.map_err(fail(5))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let args = match &cli.command {
        Command::Compare { runs, output } => return compare(runs, output.as_deref()),
        Command::Simulate(a) | Command::Correct(a) | Command::Reconstruct(a) | Command::Analyze(a) | Command::All(a) => a,
    };
    let cfg = build_config(args).map_err(config_error)?;
    let out = output_dir(&cfg);
    info!("{} -> {}", cfg.scenario.name(), out.display());
    let result = run_stages(&cli.command, &cfg, &out);
    if let Err(f) = &result {
        if let Err(e) = record_failure(&out, &cfg, &Error::InvalidInput(format!("{:#}", f.err))) {
            error!("could not update the manifest: {e}");
        }
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
