//! Cartesian reconstruction and image-domain metrics.

pub mod realign;
pub mod spectrum;
pub mod tsnr;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::fft::fft3_centered;
use crate::sim::scan::epi_kx_index;
use crate::sim::{CoilSet, ShotData};
use crate::C64;

pub use realign::realign_translations;
pub use spectrum::{trace_spectrum, CombPeak, Detrend, Spectrum, SpectrumOptions, Window};
pub use tsnr::{mask_above, tsnr, TsnrMap, TSNR_CAP};

/// Coil-combined complex volumes over time.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSeries {
    pub volumes: Vec<Array3<C64>>,
    /// m
    pub voxel_size: [f64; 3],
    /// Mid-acquisition time of every volume (s).
    pub times: Vec<f64>,
}

impl VolumeSeries {
    pub fn new(volumes: Vec<Array3<C64>>, voxel_size: [f64; 3], times: Vec<f64>) -> Result<Self> {
        if volumes.len() != times.len() {
            return Err(Error::InvalidInput("one time per volume required".into()));
        }
        if let Some(first) = volumes.first() {
            if volumes.iter().any(|v| v.dim() != first.dim()) {
                return Err(Error::InvalidInput("volumes differ in shape".into()));
            }
        }
        Ok(Self { volumes, voxel_size, times })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        let (a, b, c) = self.volumes.first().map(|v| v.dim()).unwrap_or((0, 0, 0));
        [a, b, c]
    }

    pub fn magnitudes(&self) -> Vec<Array3<f64>> {
        self.volumes.iter().map(|v| v.mapv(|x| x.norm())).collect()
    }
}

/// Per-coil k-space grids `(kx, ky, kz)` of one volume.
pub fn assemble_kspace(shots: &[&ShotData], dims: [usize; 3], volume: usize) -> Result<Vec<Array3<C64>>> {
    let [nx, ny, nz] = dims;
    let nc = shots.first().map(|s| s.samples.dim().2).unwrap_or(0);
    let mut seen = vec![false; nz];
    let mut grids = vec![Array3::<C64>::zeros((nx, ny, nz)); nc];
    for s in shots {
        let (nm, nk, c) = s.samples.dim();
        if nm != ny || nk != nx || c != nc || s.kz_index >= nz {
            return Err(Error::InvalidInput(format!("shot {} does not fit a {dims:?} grid", s.shot_index)));
        }
        seen[s.kz_index] = true;
        for m in 0..nm {
            for k in 0..nk {
                let a = epi_kx_index(m, k, nk);
                for (ci, g) in grids.iter_mut().enumerate() {
                    g[[a, m, s.kz_index]] = s.samples[[m, k, ci]];
                }
            }
        }
    }
    let missing: Vec<usize> = seen.iter().enumerate().filter(|(_, s)| !**s).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPlanes { volume, missing });
    }
    Ok(grids)
}

/// Inverse DFT per coil, then `sum_c conj(c) x_c / sum_c |c|^2`.
pub fn reconstruct_volume(shots: &[&ShotData], coil_maps: &[Array3<C64>], volume: usize) -> Result<Array3<C64>> {
    let dims = coil_maps
        .first()
        .map(|c| {
            let (a, b, d) = c.dim();
            [a, b, d]
        })
        .ok_or_else(|| Error::InvalidInput("no coil maps".into()))?;
    let grids = assemble_kspace(shots, dims, volume)?;
    if grids.len() != coil_maps.len() {
        return Err(Error::InvalidInput(format!("{} coils in data, {} maps", grids.len(), coil_maps.len())));
    }
    let mut num = Array3::<C64>::zeros((dims[0], dims[1], dims[2]));
    let mut den = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
    for (mut g, c) in grids.into_iter().zip(coil_maps) {
        fft3_centered(&mut g, true);
        ndarray::Zip::from(&mut num).and(&mut den).and(&g).and(c).for_each(|n, d, x, s| {
            *n += s.conj() * x;
            *d += s.norm_sqr();
        });
    }
    ndarray::Zip::from(&mut num).and(&den).for_each(|n, d| {
        *n = if *d > 0.0 { *n / *d } else { C64::new(0.0, 0.0) };
    });
    Ok(num)
}

/// Reconstructs every complete volume of a scan in order.
pub fn reconstruct_series(shots: &[ShotData], coils: &CoilSet, dims: [usize; 3], voxel: [f64; 3], tr: f64) -> Result<VolumeSeries> {
    let nz = dims[2];
    let maps = coils.on_grid(dims, voxel);
    let nvol = shots.iter().map(|s| s.volume_index + 1).max().unwrap_or(0);
    let mut by_volume: Vec<Vec<&ShotData>> = vec![Vec::new(); nvol];
    for s in shots {
        by_volume[s.volume_index].push(s);
    }
    let mut volumes = Vec::with_capacity(nvol);
    let mut times = Vec::with_capacity(nvol);
    for (d, group) in by_volume.iter().enumerate() {
        volumes.push(reconstruct_volume(group, &maps, d)?);
        times.push((d as f64 + 0.5) * nz as f64 * tr);
    }
    VolumeSeries::new(volumes, voxel, times)
}
