use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::VolumeSeries;

/// Value reported for voxels whose temporal std vanishes.
pub const TSNR_CAP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct TsnrMap {
    pub map: Array3<f64>,
    pub mask: Array3<bool>,
    /// Mean tSNR over uncapped mask voxels (`TSNR_CAP` if every mask voxel is capped).
    pub summary: f64,
    pub capped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsnrSummary {
    pub mean: f64,
    pub capped: usize,
    pub voxels: usize,
}

impl TsnrMap {
    pub fn summary(&self) -> TsnrSummary {
        TsnrSummary { mean: self.summary, capped: self.capped, voxels: self.mask.iter().filter(|m| **m).count() }
    }
}

/// `magnitude > frac * max(magnitude)`.
pub fn mask_above(magnitude: &Array3<f64>, frac: f64) -> Array3<bool> {
    let peak = magnitude.iter().fold(0.0f64, |a, v| a.max(*v));
    magnitude.mapv(|v| v > frac * peak)
}

/// Voxel-wise mean over std (N - 1 denominator) of the magnitude time series.
pub fn tsnr(series: &VolumeSeries, mask: &Array3<bool>) -> Result<TsnrMap> {
    if series.len() < 3 {
        return Err(Error::InvalidInput(format!("tSNR needs at least 3 volumes, got {}", series.len())));
    }
    let d = series.dims();
    if mask.dim() != (d[0], d[1], d[2]) {
        return Err(Error::InvalidInput("mask shape differs from the volumes".into()));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::InvalidInput("empty tSNR mask".into()));
    }
    let n = series.len() as f64;
    let mut sum = Array3::<f64>::zeros((d[0], d[1], d[2]));
    for v in &series.volumes {
        Zip::from(&mut sum).and(v).for_each(|s, x| *s += x.norm());
    }
    let mean = sum.mapv(|s| s / n);
    let mut ss = Array3::<f64>::zeros((d[0], d[1], d[2]));
    for v in &series.volumes {
        Zip::from(&mut ss).and(v).and(&mean).for_each(|s, x, m| *s += (x.norm() - m).powi(2));
    }
    let map = Zip::from(&mean).and(&ss).map_collect(|m, s| {
        let std = (s / (n - 1.0)).sqrt();
        if std <= 1e-12 * m || std == 0.0 {
            TSNR_CAP
        } else {
            m / std
        }
    });
    let (mut acc, mut count, mut capped) = (0.0, 0usize, 0usize);
    Zip::from(&map).and(mask).for_each(|t, m| {
        if *m {
            if *t >= TSNR_CAP {
                capped += 1;
            } else {
                acc += t;
                count += 1;
            }
        }
    });
    let summary = if count > 0 { acc / count as f64 } else { TSNR_CAP };
    Ok(TsnrMap { map, mask: mask.clone(), summary, capped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(vals: Vec<Array3<C64>>) -> VolumeSeries {
        let n = vals.len();
        VolumeSeries::new(vals, [1.0; 3], (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn constant_series_is_capped() {
        let s = series(vec![Array3::from_elem((2, 2, 2), C64::new(3.0, 1.0)); 5]);
        let t = tsnr(&s, &Array3::from_elem((2, 2, 2), true)).unwrap();
        assert!(t.map.iter().all(|v| *v == TSNR_CAP));
        assert_eq!(t.capped, 8);
    }

    #[test]
    fn monte_carlo_matches_snr() {
        let snr0 = 40.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0 / snr0).unwrap();
        let vols: Vec<_> = (0..100)
            .map(|_| Array3::from_shape_simple_fn((6, 6, 6), || C64::new(1.0 + noise.sample(&mut rng), 0.0)))
            .collect();
        let t = tsnr(&series(vols), &Array3::from_elem((6, 6, 6), true)).unwrap();
        assert!((t.summary / snr0 - 1.0).abs() < 0.1, "{}", t.summary);
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let vols: Vec<_> = (0..10).map(|_| Array3::from_shape_simple_fn((3, 3, 3), || C64::new(2.0 + noise.sample(&mut rng), 0.5))).collect();
        let scaled: Vec<_> = vols.iter().map(|v| v.mapv(|x| x * 7.5)).collect();
        let mask = Array3::from_elem((3, 3, 3), true);
        let a = tsnr(&series(vols), &mask).unwrap();
        let b = tsnr(&series(scaled), &mask).unwrap();
        assert!((a.summary - b.summary).abs() < 1e-9 * a.summary);
    }

    #[test]
    fn rejects_short_series_and_empty_mask() {
        let s = series(vec![Array3::from_elem((2, 2, 2), C64::new(1.0, 0.0)); 2]);
        assert!(tsnr(&s, &Array3::from_elem((2, 2, 2), true)).is_err());
        let s = series(vec![Array3::from_elem((2, 2, 2), C64::new(1.0, 0.0)); 4]);
        assert!(tsnr(&s, &Array3::from_elem((2, 2, 2), false)).is_err());
    }
}
