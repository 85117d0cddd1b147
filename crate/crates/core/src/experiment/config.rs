//! Experiment configuration (TOML). Degrees, millimeters and Hz at this boundary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equalize::EqualizationMode;
use crate::error::{Error, Result};
use crate::model::{RigidPose, TimingConfig};
use crate::navcorr::PhaseCorrectionConfig;
use crate::recon::SpectrumOptions;
use crate::servo::ServoConfig;
use crate::sim::{CombTransient, FrequencyTerm, PerturbationScript, PhantomConfig, PhaseTerm, PoseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[serde(alias = "rl", alias = "readout")]
    X,
    #[serde(alias = "ap", alias = "phase")]
    Y,
    #[serde(alias = "fh", alias = "slice")]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSegment {
    pub start_s: f64,
    #[serde(default)]
    pub angles_deg: [f64; 3],
    #[serde(default)]
    pub translation_mm: [f64; 3],
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

fn default_buildup() -> f64 {
    30.0
}

/// Perturbation scenario. Field transients use signed slice-encode scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Static,
    Drift {
        hz_per_min: f64,
    },
    Comb {
        amplitude_hz: f64,
        tau_s: f64,
        #[serde(default = "default_buildup")]
        buildup_s: f64,
    },
    /// `[0, +p, 0, -p, 0, +y, 0, -y]` steps of `step_deg`, each held `period_s`.
    InstructedMotion {
        #[serde(default = "one")]
        step_deg: f64,
        #[serde(default = "ten")]
        period_s: f64,
    },
    /// Alternating identity / shift along `axis`.
    Shifts {
        axis: Axis,
        #[serde(default = "one")]
        amplitude_mm: f64,
        #[serde(default = "ten")]
        period_s: f64,
    },
    /// Alternating identity / rotation about `axis`.
    Rotation {
        axis: Axis,
        #[serde(default = "one")]
        angle_deg: f64,
        #[serde(default = "ten")]
        period_s: f64,
    },
    /// Sinusoidal off-resonance.
    Breathing {
        freq_hz: f64,
        amplitude_hz: f64,
    },
    /// Instructed motion plus frequency drift and an optional readout transient.
    Composite {
        #[serde(default = "one")]
        step_deg: f64,
        #[serde(default = "ten")]
        period_s: f64,
        hz_per_min: f64,
        #[serde(default)]
        comb: Option<CombTransient>,
    },
    /// Fully explicit script.
    Schedule {
        #[serde(default)]
        poses: Vec<PoseSegment>,
        #[serde(default)]
        frequency: Vec<FrequencyTerm>,
        #[serde(default)]
        phase: Vec<PhaseTerm>,
        #[serde(default)]
        comb: Option<CombTransient>,
    },
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::Static
    }
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::Drift { .. } => "drift",
            Scenario::Comb { .. } => "comb",
            Scenario::InstructedMotion { .. } => "instructed_motion",
            Scenario::Shifts { .. } => "shifts",
            Scenario::Rotation { .. } => "rotation",
            Scenario::Breathing { .. } => "breathing",
            Scenario::Composite { .. } => "composite",
            Scenario::Schedule { .. } => "schedule",
        }
    }

    /// Script covering `duration` seconds of recorded acquisition.
    pub fn script(&self, duration: f64, noise_std: f64, seed: u64) -> PerturbationScript {
        let mut s = PerturbationScript { noise_std, seed, ..Default::default() };
        match self {
            Scenario::Static => {}
            Scenario::Drift { hz_per_min } => s.frequency.push(FrequencyTerm::Drift { hz_per_min: *hz_per_min }),
            Scenario::Comb { amplitude_hz, tau_s, buildup_s } => {
                s.comb = Some(CombTransient { amplitude_hz: *amplitude_hz, tau_s: *tau_s, buildup_s: *buildup_s })
            }
            Scenario::InstructedMotion { step_deg, period_s } => s.pose = PoseSchedule::instructed(*step_deg, *period_s, duration),
            Scenario::Shifts { axis, amplitude_mm, period_s } => {
                s.pose = PoseSchedule::alternating_shift(axis.index(), *amplitude_mm, *period_s, duration)
            }
            Scenario::Rotation { axis, angle_deg, period_s } => {
                s.pose = PoseSchedule::alternating_rotation(axis.index(), *angle_deg, *period_s, duration)
            }
            Scenario::Breathing { freq_hz, amplitude_hz } => s.frequency.push(FrequencyTerm::Sinusoid {
                amplitude_hz: *amplitude_hz,
                freq_hz: *freq_hz,
                phase_rad: 0.0,
            }),
            Scenario::Composite { step_deg, period_s, hz_per_min, comb } => {
                s.pose = PoseSchedule::instructed(*step_deg, *period_s, duration);
                s.frequency.push(FrequencyTerm::Drift { hz_per_min: *hz_per_min });
                s.comb = comb.clone();
            }
            Scenario::Schedule { poses, frequency, phase, comb } => {
                s.pose = PoseSchedule {
                    segments: poses
                        .iter()
                        .map(|p| (p.start_s, RigidPose::from_degrees_mm(p.angles_deg, p.translation_mm)))
                        .collect(),
                };
                s.frequency = frequency.clone();
                s.phase = phase.clone();
                s.comb = comb.clone();
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoilKind {
    #[default]
    Analytic,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavigatorConfig {
    /// rad/m
    pub knav: f64,
    pub samples_per_orbit: usize,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self { knav: 400.0, samples_per_orbit: 64 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Navigator phase correction, then equalization.
    #[default]
    NavigatorFirst,
    EqualizationFirst,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corrections {
    pub servo: ServoConfig,
    pub nav_phase: Option<PhaseCorrectionConfig>,
    pub equalization: Option<EqualizationMode>,
    pub order: StageOrder,
    /// Removes the true per-sample phase (reference runs only).
    pub oracle_phase: bool,
}

impl Corrections {
    /// Short label such as `servo=on,nav=median9/relative,eq=epi`.
    pub fn label(&self) -> String {
        let servo = match self.servo.mode {
            crate::servo::ServoMode::Off => "off",
            crate::servo::ServoMode::On => "on",
            crate::servo::ServoMode::Oracle => "oracle",
        };
        let nav = match &self.nav_phase {
            None => "none".to_string(),
            Some(c) => {
                let f = match c.filter {
                    crate::navcorr::TraceFilter::None => "raw".to_string(),
                    crate::navcorr::TraceFilter::Median { window } => format!("median{window}"),
                };
                let t = match c.timing {
                    crate::navcorr::TimingMode::Absolute => "absolute",
                    crate::navcorr::TimingMode::Relative => "relative",
                };
                format!("{f}/{t}")
            }
        };
        let eq = match self.equalization {
            None => "none".to_string(),
            Some(EqualizationMode::Epi) => "epi".to_string(),
            Some(EqualizationMode::Generic { window }) => format!("generic{window}"),
        };
        let mut s = format!("servo={servo},nav={nav},eq={eq}");
        if self.oracle_phase {
            s.push_str(",oracle_phase");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Mask threshold relative to the phantom maximum.
    pub mask_fraction: f64,
    pub realign: bool,
    pub spectrum: SpectrumOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { mask_fraction: 0.2, realign: true, spectrum: SpectrumOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    /// Complex noise std per k-space sample and coil.
    pub noise_std: f64,
    pub seed: u64,
    pub timing: TimingConfig,
    pub phantom: PhantomConfig,
    pub coils: CoilKind,
    pub navigator: NavigatorConfig,
    pub corrections: Corrections,
    pub analysis: AnalysisConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            scenario: Scenario::Static,
            noise_std: 0.0,
            seed: 1,
            timing: TimingConfig::desk(),
            phantom: PhantomConfig::default(),
            coils: CoilKind::Analytic,
            navigator: NavigatorConfig::default(),
            corrections: Corrections::default(),
            analysis: AnalysisConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        if self.phantom.dims != [self.timing.nk, self.timing.nm, self.timing.nz] {
            return Err(Error::Config(format!(
                "phantom grid {:?} must equal the encoding matrix [nk, nm, nz] = [{}, {}, {}]",
                self.phantom.dims, self.timing.nk, self.timing.nm, self.timing.nz
            )));
        }
        if let Some(n) = &self.corrections.nav_phase {
            n.validate()?;
        }
        if let Some(EqualizationMode::Generic { window: 0 }) = self.corrections.equalization {
            return Err(Error::Config("generic equalization window must be >= 1".into()));
        }
        if !(self.analysis.mask_fraction > 0.0 && self.analysis.mask_fraction < 1.0) {
            return Err(Error::Config("mask_fraction must lie in (0, 1)".into()));
        }
        if self.navigator.samples_per_orbit < 8 || !(self.navigator.knav > 0.0) {
            return Err(Error::Config("navigator needs knav > 0 and samples_per_orbit >= 8".into()));
        }
        self.scenario.script(self.duration(), self.noise_std, self.seed).validate()?;
        Ok(())
    }

    /// Recorded acquisition time (s).
    pub fn duration(&self) -> f64 {
        self.timing.nvol as f64 * self.timing.tvol
    }

    pub fn script(&self) -> PerturbationScript {
        self.scenario.script(self.duration(), self.noise_std, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navcorr::{TimingMode, TraceFilter};
    use crate::servo::ServoMode;

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig {
            scenario: Scenario::Comb { amplitude_hz: 2.0, tau_s: 0.02, buildup_s: 30.0 },
            noise_std: 1.5,
            ..Default::default()
        };
        cfg.corrections.servo.mode = ServoMode::On;
        cfg.corrections.nav_phase = Some(PhaseCorrectionConfig { filter: TraceFilter::Median { window: 9 }, timing: TimingMode::Relative });
        cfg.corrections.equalization = Some(EqualizationMode::Generic { window: 32 });
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[scenario]\nkind = \"drift\"\nhz_per_min = 5.0\n").unwrap();
        assert_eq!(cfg.timing, TimingConfig::desk());
        assert_eq!(cfg.scenario, Scenario::Drift { hz_per_min: 5.0 });
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[scenario]\nkind = \"drift\"\nrate = 5.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("noise_std = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[corrections.nav_phase]\nfilter = { kind = \"median\", window = 4 }\n").is_err());
    }

    #[test]
    fn axis_aliases() {
        let cfg = ExperimentConfig::from_toml_str("[scenario]\nkind = \"shifts\"\naxis = \"ap\"\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::Shifts { axis: Axis::Y, amplitude_mm: 1.0, period_s: 10.0 });
    }

    #[test]
    fn labels() {
        let c = Corrections { equalization: Some(EqualizationMode::Epi), ..Default::default() };
        assert_eq!(c.label(), "servo=off,nav=none,eq=epi");
    }
}
