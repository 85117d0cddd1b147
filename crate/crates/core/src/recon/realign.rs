//! Translation-only realignment by 3D phase correlation against the first volume.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::fft::fft3_centered;
use crate::recon::VolumeSeries;
use crate::C64;

/// Signed centered wavenumbers (rad per voxel) along one axis.
fn wavenumbers(n: usize) -> Vec<f64> {
    (0..n).map(|a| 2.0 * std::f64::consts::PI * (a as f64 - (n / 2) as f64) / n as f64).collect()
}

/// Estimates the shift `s` (voxels) with `vol(x) ~ reference(x - s)`.
pub fn estimate_shift(reference: &Array3<C64>, vol: &Array3<C64>) -> Result<[f64; 3]> {
    if reference.dim() != vol.dim() {
        return Err(Error::InvalidInput("volumes differ in shape".into()));
    }
    let (nx, ny, nz) = reference.dim();
    let dims = [nx, ny, nz];
    let mut f0 = reference.clone();
    let mut f1 = vol.clone();
    fft3_centered(&mut f0, false);
    fft3_centered(&mut f1, false);
    let cross = ndarray::Zip::from(&f1).and(&f0).map_collect(|a, b| a * b.conj());
    let total: f64 = cross.iter().map(|c| c.norm()).sum();
    if !(total > 1e-300) || !total.is_finite() {
        log::warn!("degenerate correlation peak, reporting zero shift");
        return Ok([0.0; 3]);
    }
    // Normalized cross-power spectrum; inverse transform gives the correlation surface.
    let mut surface = cross.mapv(|c| {
        let n = c.norm();
        if n > 1e-300 { c / n } else { C64::new(0.0, 0.0) }
    });
    fft3_centered(&mut surface, true);
    let mag = surface.mapv(|c| c.norm());
    let (peak_idx, peak) = mag
        .indexed_iter()
        .fold(((0, 0, 0), f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let peak_idx = [peak_idx.0, peak_idx.1, peak_idx.2];
    let mut s = [0.0; 3];
    for a in 0..3 {
        let n = dims[a];
        let centered = peak_idx[a] as f64 - (n / 2) as f64;
        let mut lo = peak_idx;
        let mut hi = peak_idx;
        lo[a] = (peak_idx[a] + n - 1) % n;
        hi[a] = (peak_idx[a] + 1) % n;
        let (ym, y0, yp) = (mag[lo], peak, mag[hi]);
        let den = ym - 2.0 * y0 + yp;
        let frac = if den < 0.0 { (0.5 * (ym - yp) / den).clamp(-0.5, 0.5) } else { 0.0 };
        s[a] = centered + frac;
    }
    Ok(refine(&cross, dims, s))
}

/// Newton ascent on `|sum_k C_k exp(i k.s)|^2`, the continuous cross-correlation.
fn refine(cross: &Array3<C64>, dims: [usize; 3], start: [f64; 3]) -> [f64; 3] {
    let ks = [wavenumbers(dims[0]), wavenumbers(dims[1]), wavenumbers(dims[2])];
    let eval = |s: &[f64; 3]| -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let mut c = C64::new(0.0, 0.0);
        let mut g = [C64::new(0.0, 0.0); 3];
        let mut h = [[C64::new(0.0, 0.0); 3]; 3];
        let ex: Vec<C64> = ks[0].iter().map(|k| C64::from_polar(1.0, k * s[0])).collect();
        let ey: Vec<C64> = ks[1].iter().map(|k| C64::from_polar(1.0, k * s[1])).collect();
        let ez: Vec<C64> = ks[2].iter().map(|k| C64::from_polar(1.0, k * s[2])).collect();
        for ((i, j, l), v) in cross.indexed_iter() {
            let term = v * ex[i] * ey[j] * ez[l];
            let k = [ks[0][i], ks[1][j], ks[2][l]];
            c += term;
            for a in 0..3 {
                g[a] += term * C64::new(0.0, k[a]);
                for b in 0..3 {
                    h[a][b] -= term * (k[a] * k[b]);
                }
            }
        }
        let f = c.norm_sqr();
        let grad = [0, 1, 2].map(|a| 2.0 * (c.conj() * g[a]).re);
        let mut hess = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                hess[a][b] = 2.0 * (g[a].conj() * g[b] + c.conj() * h[a][b]).re;
            }
        }
        (f, grad, hess)
    };
    let mut s = start;
    let (mut f, mut grad, mut hess) = eval(&s);
    for _ in 0..20 {
        let hm = nalgebra::Matrix3::from_fn(|a, b| hess[a][b]);
        let gv = nalgebra::Vector3::from(grad);
        let Some(step) = hm.lu().solve(&(-gv)) else { break };
        let mut step = [step.x, step.y, step.z];
        let len = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !len.is_finite() {
            break;
        }
        if len > 0.5 {
            step = step.map(|v| v * 0.5 / len);
        }
        let mut accepted = false;
        for _ in 0..10 {
            let trial = [s[0] + step[0], s[1] + step[1], s[2] + step[2]];
            let (ft, gt, ht) = eval(&trial);
            if ft >= f {
                s = trial;
                f = ft;
                grad = gt;
                hess = ht;
                accepted = true;
                break;
            }
            step = step.map(|v| v * 0.5);
        }
        if !accepted || step.iter().all(|v| v.abs() < 1e-10) {
            break;
        }
    }
    s
}

/// Applies `vol(x + s)` through a Fourier phase ramp (`s` in voxels).
pub fn shift_volume(vol: &Array3<C64>, s: [f64; 3]) -> Array3<C64> {
    let (nx, ny, nz) = vol.dim();
    let ks = [wavenumbers(nx), wavenumbers(ny), wavenumbers(nz)];
    let mut f = vol.clone();
    fft3_centered(&mut f, false);
    for ((i, j, l), v) in f.indexed_iter_mut() {
        *v *= C64::from_polar(1.0, ks[0][i] * s[0] + ks[1][j] * s[1] + ks[2][l] * s[2]);
    }
    fft3_centered(&mut f, true);
    f
}

/// Per-volume shifts against volume 0 (mm) and the series shifted back.
pub fn realign_translations(series: &VolumeSeries) -> Result<(VolumeSeries, Vec<[f64; 3]>)> {
    if series.len() < 2 {
        return Err(Error::InvalidInput("realignment needs at least two volumes".into()));
    }
    let reference = &series.volumes[0];
    let mut volumes = Vec::with_capacity(series.len());
    let mut shifts = Vec::with_capacity(series.len());
    for (d, v) in series.volumes.iter().enumerate() {
        let s = if d == 0 { [0.0; 3] } else { estimate_shift(reference, v)? };
        volumes.push(if s == [0.0; 3] { v.clone() } else { shift_volume(v, s) });
        shifts.push([0, 1, 2].map(|a| s[a] * series.voxel_size[a] * 1e3));
    }
    Ok((VolumeSeries::new(volumes, series.voxel_size, series.times.clone())?, shifts))
}
