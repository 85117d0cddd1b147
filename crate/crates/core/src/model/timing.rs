use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sequence timing and acquisition dimensions. All times in seconds, measured from the
/// excitation of each shot unless stated otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// Echo time of the k-space center echo.
    pub te: f64,
    pub tr: f64,
    /// Volume time, `tr * nz`.
    pub tvol: f64,
    /// Navigator readout duration.
    pub tnav: f64,
    /// Navigator start after excitation.
    pub nav_start: f64,
    pub echo_spacing: f64,
    /// Slice encodes per volume (one kz plane per shot).
    pub nz: usize,
    /// Echoes per shot (phase encodes).
    pub nm: usize,
    /// Samples per echo (readout).
    pub nk: usize,
    pub nc: usize,
    pub nvol: usize,
    /// Dummy volumes before the first recorded shot; navigator calibration happens here.
    pub warmup_volumes: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TimingConfig {
    /// Desk-scale protocol: 32 x 32 x 16 encodes, TR 64 ms, TE 30 ms.
    pub fn desk() -> Self {
        Self {
            te: 30e-3,
            tr: 64e-3,
            tvol: 64e-3 * 16.0,
            tnav: 3.2e-3,
            nav_start: 1.0e-3,
            echo_spacing: 0.6e-3,
            nz: 16,
            nm: 32,
            nk: 32,
            nc: 4,
            nvol: 40,
            warmup_volumes: 1,
        }
    }

    /// Full-size in-vivo timing (32 slice encodes at TR 64 ms).
    pub fn invivo_protocol() -> Self {
        Self { nz: 32, tvol: 64e-3 * 32.0, nvol: 300, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.te, self.tr, self.tvol, self.tnav, self.nav_start, self.echo_spacing];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("timing values must be finite and non-negative".into()));
        }
        if self.tr <= 0.0 || self.tnav <= 0.0 || self.echo_spacing <= 0.0 {
            return Err(Error::Config("tr, tnav and echo_spacing must be positive".into()));
        }
        if self.nz < 2 || self.nm < 2 || self.nk < 2 || self.nc < 1 || self.nvol < 1 {
            return Err(Error::Config("acquisition dimensions too small".into()));
        }
        if self.nz % 2 != 0 || self.nm % 2 != 0 || self.nk % 2 != 0 {
            return Err(Error::Config("nz, nm and nk must be even".into()));
        }
        if ((self.tvol - self.tr * self.nz as f64) / self.tvol).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "tvol {} s does not equal tr * nz = {} s",
                self.tvol,
                self.tr * self.nz as f64
            )));
        }
        let (first, last) = (self.readout_start(), self.readout_end());
        if self.te < first || self.te > last {
            return Err(Error::Config("TE lies outside the echo train".into()));
        }
        if self.nav_start + self.tnav > first {
            return Err(Error::Config("navigator overlaps the EPI readout".into()));
        }
        if last >= self.tr {
            return Err(Error::Config("echo train exceeds TR".into()));
        }
        if self.warmup_volumes == 0 || self.warmup_volumes * self.nz < 5 {
            return Err(Error::Config("warm-up must hold the five calibration navigators".into()));
        }
        Ok(())
    }

    pub fn dwell(&self) -> f64 {
        self.echo_spacing / self.nk as f64
    }

    /// Time since excitation of readout sample `k` of echo `m`. The k-space center of
    /// echo `nm / 2` is sampled exactly at TE.
    pub fn sample_time(&self, m: usize, k: usize) -> f64 {
        self.te
            + (m as f64 - (self.nm / 2) as f64) * self.echo_spacing
            + (k as f64 - (self.nk / 2) as f64) * self.dwell()
    }

    /// Center time of echo `m`.
    pub fn echo_time(&self, m: usize) -> f64 {
        self.te + (m as f64 - (self.nm / 2) as f64) * self.echo_spacing
    }

    pub fn readout_start(&self) -> f64 {
        self.sample_time(0, 0)
    }

    pub fn readout_end(&self) -> f64 {
        self.sample_time(self.nm - 1, self.nk - 1)
    }

    pub fn shots_per_volume(&self) -> usize {
        self.nz
    }

    pub fn total_shots(&self) -> usize {
        self.nz * self.nvol
    }

    /// Excitation time of recorded shot `j` (0-based); recorded shots start at t = 0.
    pub fn shot_time(&self, j: usize) -> f64 {
        j as f64 * self.tr
    }

    pub fn f_vol(&self) -> f64 {
        1.0 / self.tvol
    }

    /// `(volume, segment)` of a 0-based running shot index.
    pub fn shot_position(&self, j: usize) -> (usize, usize) {
        (j / self.nz, j % self.nz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_is_valid() {
        TimingConfig::desk().validate().unwrap();
        TimingConfig::invivo_protocol().validate().unwrap();
    }

    #[test]
    fn tvol_must_match() {
        let t = TimingConfig { tvol: 2.0, ..TimingConfig::desk() };
        assert!(t.validate().is_err());
    }

    #[test]
    fn te_at_center_sample() {
        let t = TimingConfig::desk();
        assert!((t.sample_time(t.nm / 2, t.nk / 2) - t.te).abs() < 1e-15);
        assert!(t.readout_start() < t.te && t.te < t.readout_end());
    }

    #[test]
    fn sample_times_increase() {
        let t = TimingConfig::desk();
        let mut prev = f64::NEG_INFINITY;
        for m in 0..t.nm {
            for k in 0..t.nk {
                let s = t.sample_time(m, k);
                assert!(s > prev);
                prev = s;
            }
        }
    }

    #[test]
    fn invivo_volume_frequency() {
        // 32 encodes at TR 64 ms: f_vol = 1 / 2.048 s, i.e. about 0.49 Hz.
        let t = TimingConfig::invivo_protocol();
        assert!((t.f_vol() - 0.48828125).abs() < 1e-12);
        assert!((t.f_vol() - 0.49).abs() < 0.005);
    }

    #[test]
    fn long_navigator_fits() {
        let t = TimingConfig { tnav: 11.5e-3, ..TimingConfig::desk() };
        t.validate().unwrap();
    }

    #[test]
    fn shot_index_map() {
        let t = TimingConfig::desk();
        assert_eq!(t.shot_position(0), (0, 0));
        assert_eq!(t.shot_position(17), (1, 1));
    }
}
