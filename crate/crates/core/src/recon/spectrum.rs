//! Welch power spectra of per-shot parameter traces with a comb report at `n f_vol`.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    None,
    Mean,
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumOptions {
    pub window: Window,
    pub detrend: Detrend,
    /// Segment length in volumes; `None` analyzes the whole series as one segment.
    pub segment_volumes: Option<usize>,
    pub harmonics: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { window: Window::Hann, detrend: Detrend::Linear, segment_volumes: Some(8), harmonics: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombPeak {
    pub harmonic: usize,
    pub freq_hz: f64,
    pub power: f64,
    /// Power over the median baseline in dB.
    pub db_over_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// One-sided power; sums to the (detrended) variance.
    pub power: Vec<f64>,
    /// Median power excluding DC.
    pub baseline: f64,
    pub f_vol: f64,
    pub peaks: Vec<CombPeak>,
    pub segments: usize,
}

fn detrend(x: &mut [f64], mode: Detrend) {
    let n = x.len() as f64;
    match mode {
        Detrend::None => {}
        Detrend::Mean => {
            let m = x.iter().sum::<f64>() / n;
            x.iter_mut().for_each(|v| *v -= m);
        }
        Detrend::Linear => {
            let tm = (n - 1.0) / 2.0;
            let m = x.iter().sum::<f64>() / n;
            let stt: f64 = (0..x.len()).map(|i| (i as f64 - tm).powi(2)).sum();
            let stx: f64 = x.iter().enumerate().map(|(i, v)| (i as f64 - tm) * (v - m)).sum();
            let slope = if stt > 0.0 { stx / stt } else { 0.0 };
            x.iter_mut().enumerate().for_each(|(i, v)| *v -= m + slope * (i as f64 - tm));
        }
    }
}

fn db(p: f64, base: f64) -> f64 {
    if p == base {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (p / base).log10()
    }
}

/// Welch estimate of a trace sampled every `tr` seconds. Power is normalized so that,
/// for a rectangular window and a single segment, it sums exactly to the variance.
pub fn trace_spectrum(trace: &[f64], tr: f64, tvol: f64, opts: &SpectrumOptions) -> Result<Spectrum> {
    if !(tr > 0.0) || !(tvol > 0.0) {
        return Err(Error::InvalidInput("tr and tvol must be positive".into()));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace".into()));
    }
    let shots_per_vol = (tvol / tr).round() as usize;
    if trace.len() < 4 * shots_per_vol {
        return Err(Error::InvalidInput(format!(
            "trace of {} shots is shorter than 4 volumes ({} shots)",
            trace.len(),
            4 * shots_per_vol
        )));
    }
    let seg = opts
        .segment_volumes
        .map(|v| v * shots_per_vol)
        .filter(|s| *s >= 2 && *s <= trace.len())
        .unwrap_or(trace.len());
    let hop = (seg / 2).max(1);
    let window: Vec<f64> = match opts.window {
        Window::Rectangular => vec![1.0; seg],
        Window::Hann => (0..seg).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos()).collect(),
    };
    let wpow = window.iter().map(|w| w * w).sum::<f64>() / seg as f64;
    let nbins = seg / 2 + 1;
    let mut power = vec![0.0; nbins];
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut segments = 0;
    let mut start = 0;
    while start + seg <= trace.len() {
        let mut x = trace[start..start + seg].to_vec();
        detrend(&mut x, opts.detrend);
        let mut buf: Vec<C64> = x.iter().zip(&window).map(|(v, w)| C64::new(v * w, 0.0)).collect();
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let two_sided = buf[k].norm_sqr() / (seg as f64 * seg as f64 * wpow);
            let mirrored = k != 0 && !(seg % 2 == 0 && k == seg / 2);
            *p += if mirrored { 2.0 * two_sided } else { two_sided };
        }
        segments += 1;
        start += hop;
    }
    power.iter_mut().for_each(|p| *p /= segments as f64);
    let df = 1.0 / (seg as f64 * tr);
    let freqs: Vec<f64> = (0..nbins).map(|k| k as f64 * df).collect();
    let mut rest: Vec<f64> = power[1..].to_vec();
    rest.sort_by(f64::total_cmp);
    let baseline = if rest.is_empty() {
        0.0
    } else if rest.len() % 2 == 1 {
        rest[rest.len() / 2]
    } else {
        0.5 * (rest[rest.len() / 2 - 1] + rest[rest.len() / 2])
    };
    let f_vol = 1.0 / tvol;
    let peaks = (1..=opts.harmonics)
        .filter_map(|n| {
            let k = (n as f64 * f_vol / df).round() as usize;
            (k < nbins).then(|| CombPeak {
                harmonic: n,
                freq_hz: freqs[k],
                power: power[k],
                db_over_baseline: db(power[k], baseline),
            })
        })
        .collect();
    Ok(Spectrum { freqs, power, baseline, f_vol, peaks, segments })
}

impl Spectrum {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["freq_hz", "power"]).map_err(|e| Error::Format(e.to_string()))?;
        for (f, p) in self.freqs.iter().zip(&self.power) {
            wr.write_record([f.to_string(), p.to_string()]).map_err(|e| Error::Format(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}
