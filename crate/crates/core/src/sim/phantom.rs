//! Digital phantom and analytic receive coils.

use nalgebra::Vector3;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Proton-density grid of point sources at voxel centers. Voxel `(i, j, k)` sits at
/// `((i - nx/2) dx, (j - ny/2) dy, (k - nz/2) dz)`, which puts the origin on a voxel
/// center and matches the centered DFT used by reconstruction.
#[derive(Clone, Debug)]
pub struct DigitalPhantom {
    values: Array3<C64>,
    voxel_size: [f64; 3],
    support: Array3<bool>,
}

/// Parameters of the ellipsoid-with-inclusions phantom (boundary units: mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub voxel_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub inclusions: usize,
    pub inclusion_radius_mm: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 16],
            voxel_mm: [5.0, 5.0, 5.0],
            semi_axes_mm: [55.0, 62.0, 28.0],
            inclusions: 10,
            inclusion_radius_mm: 9.0,
            seed: 11,
        }
    }
}

impl DigitalPhantom {
    pub fn from_values(values: Array3<C64>, voxel_size: [f64; 3]) -> Result<Self> {
        if voxel_size.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidInput("voxel size must be positive".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("phantom values".into()));
        }
        let support = values.mapv(|v| v.norm() > 0.0);
        Ok(Self { values, voxel_size, support })
    }

    /// Unit-density ellipsoid with signal-free spherical inclusions.
    pub fn ellipsoid_with_inclusions(cfg: &PhantomConfig) -> Result<Self> {
        let voxel = cfg.voxel_mm.map(|v| v * 1e-3);
        let semi = cfg.semi_axes_mm.map(|v| v * 1e-3);
        let r_inc = cfg.inclusion_radius_mm * 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut centers: Vec<Vector3<f64>> = Vec::new();
        let inner = semi.map(|a| (a - r_inc).max(0.0));
        let mut attempts = 0;
        while centers.len() < cfg.inclusions && attempts < 10_000 {
            attempts += 1;
            let u = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if u.norm_squared() > 1.0 {
                continue;
            }
            let c = Vector3::new(u.x * inner[0], u.y * inner[1], u.z * inner[2]);
            if centers.iter().all(|o| (o - c).norm() > 2.2 * r_inc) {
                centers.push(c);
            }
        }
        let [nx, ny, nz] = cfg.dims;
        let values = Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| {
            let x = voxel_position([i, j, k], cfg.dims, voxel);
            let e = (x.x / semi[0]).powi(2) + (x.y / semi[1]).powi(2) + (x.z / semi[2]).powi(2);
            if e > 1.0 || centers.iter().any(|c| (x - c).norm() < r_inc) {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0, 0.0)
            }
        });
        Self::from_values(values, voxel)
    }

    /// Point sources at the given voxel indices.
    pub fn point_sources(dims: [usize; 3], voxel_size: [f64; 3], sources: &[([usize; 3], C64)]) -> Result<Self> {
        let mut values = Array3::from_elem((dims[0], dims[1], dims[2]), C64::new(0.0, 0.0));
        for &(idx, v) in sources {
            if idx.iter().zip(dims.iter()).any(|(i, n)| i >= n) {
                return Err(Error::InvalidInput(format!("source index {idx:?} outside grid")));
            }
            values[idx] += v;
        }
        Self::from_values(values, voxel_size)
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn fov(&self) -> [f64; 3] {
        let d = self.dims();
        [0, 1, 2].map(|a| d[a] as f64 * self.voxel_size[a])
    }

    pub fn values(&self) -> &Array3<C64> {
        &self.values
    }

    pub fn support(&self) -> &Array3<bool> {
        &self.support
    }

    pub fn position(&self, idx: [usize; 3]) -> Vector3<f64> {
        voxel_position(idx, self.dims(), self.voxel_size)
    }

    /// Support voxels as (index, value) pairs in memory order.
    pub fn support_voxels(&self) -> Vec<([usize; 3], C64)> {
        self.values
            .indexed_iter()
            .filter(|(_, v)| v.norm() > 0.0)
            .map(|((i, j, k), v)| ([i, j, k], *v))
            .collect()
    }

    /// k-space step of the Cartesian grid per axis (rad/m).
    pub fn k_step(&self) -> [f64; 3] {
        self.fov().map(|f| 2.0 * std::f64::consts::PI / f)
    }

    /// Smallest distance (m) between the support and the FOV boundary per axis.
    pub fn fov_margin(&self) -> [f64; 3] {
        let half = self.fov().map(|f| f / 2.0);
        let mut margin = half;
        for (idx, _) in self.support_voxels() {
            let x = self.position(idx);
            for a in 0..3 {
                margin[a] = margin[a].min(half[a] - x[a].abs());
            }
        }
        margin
    }
}

pub fn voxel_position(idx: [usize; 3], dims: [usize; 3], voxel: [f64; 3]) -> Vector3<f64> {
    Vector3::new(
        (idx[0] as f64 - (dims[0] / 2) as f64) * voxel[0],
        (idx[1] as f64 - (dims[1] / 2) as f64) * voxel[1],
        (idx[2] as f64 - (dims[2] / 2) as f64) * voxel[2],
    )
}

/// One receive coil, fixed in the scanner frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoilModel {
    /// Gaussian magnitude profile around `center` (m) with constant phase.
    Gaussian { center: [f64; 3], width: f64, phase: f64 },
    Uniform { re: f64, im: f64 },
}

impl CoilModel {
    pub fn sensitivity(&self, x: &Vector3<f64>) -> C64 {
        match self {
            CoilModel::Gaussian { center, width, phase } => {
                let d2 = (x - Vector3::from(*center)).norm_squared();
                C64::from_polar((-d2 / (2.0 * width * width)).exp(), *phase)
            }
            CoilModel::Uniform { re, im } => C64::new(*re, *im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoilSet {
    pub coils: Vec<CoilModel>,
}

impl CoilSet {
    /// `nc` Gaussian coils spread around the object in the transverse plane.
    pub fn analytic(nc: usize) -> Self {
        let coils = (0..nc)
            .map(|c| {
                let ang = 2.0 * std::f64::consts::PI * c as f64 / nc as f64 + 0.3;
                let z = if c % 2 == 0 { 0.015 } else { -0.015 };
                CoilModel::Gaussian {
                    center: [0.09 * ang.cos(), 0.09 * ang.sin(), z],
                    width: 0.11,
                    phase: 0.7 * c as f64,
                }
            })
            .collect();
        Self { coils }
    }

    /// Spatially constant sensitivities with distinct phases.
    pub fn uniform(nc: usize) -> Self {
        let coils = (0..nc)
            .map(|c| {
                let v = C64::from_polar(1.0, 0.9 * c as f64);
                CoilModel::Uniform { re: v.re, im: v.im }
            })
            .collect();
        Self { coils }
    }

    pub fn len(&self) -> usize {
        self.coils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coils.is_empty()
    }

    pub fn sensitivity(&self, c: usize, x: &Vector3<f64>) -> C64 {
        self.coils[c].sensitivity(x)
    }

    /// Sensitivities on the phantom grid, shape `(nc, nx, ny, nz)` flattened per coil.
    pub fn on_grid(&self, dims: [usize; 3], voxel: [f64; 3]) -> Vec<Array3<C64>> {
        self.coils
            .iter()
            .map(|coil| {
                Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(i, j, k)| {
                    coil.sensitivity(&voxel_position([i, j, k], dims, voxel))
                })
            })
            .collect()
    }

    /// Checks that the sum of squares is positive over the phantom support.
    pub fn validate_over(&self, phantom: &DigitalPhantom) -> Result<()> {
        if self.coils.is_empty() {
            return Err(Error::InvalidInput("coil set is empty".into()));
        }
        for (idx, _) in phantom.support_voxels() {
            let x = phantom.position(idx);
            let sos: f64 = self.coils.iter().map(|c| c.sensitivity(&x).norm_sqr()).sum();
            if !(sos > 1e-12) {
                return Err(Error::InvalidInput(format!("coil sum of squares vanishes at voxel {idx:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_phantom_is_compact() {
        let p = DigitalPhantom::ellipsoid_with_inclusions(&PhantomConfig::default()).unwrap();
        let margin = p.fov_margin();
        // At least two voxels of clearance on every side.
        for a in 0..3 {
            assert!(margin[a] >= 2.0 * p.voxel_size()[a] - 1e-12, "axis {a} margin {}", margin[a]);
        }
        let n = p.support_voxels().len();
        assert!(n > 1500 && n < 5000, "support voxels {n}");
        assert!(p.values().iter().all(|v| v.re >= 0.0 && v.im == 0.0));
    }

    #[test]
    fn inclusions_are_signal_free() {
        let cfg = PhantomConfig::default();
        let with = DigitalPhantom::ellipsoid_with_inclusions(&cfg).unwrap();
        let without = DigitalPhantom::ellipsoid_with_inclusions(&PhantomConfig { inclusions: 0, ..cfg }).unwrap();
        assert!(with.support_voxels().len() < without.support_voxels().len());
    }

    #[test]
    fn analytic_coils_cover_support() {
        let p = DigitalPhantom::ellipsoid_with_inclusions(&PhantomConfig::default()).unwrap();
        CoilSet::analytic(4).validate_over(&p).unwrap();
        CoilSet::uniform(2).validate_over(&p).unwrap();
        assert!(CoilSet { coils: vec![] }.validate_over(&p).is_err());
    }

    #[test]
    fn origin_is_voxel_center() {
        let x = voxel_position([16, 16, 8], [32, 32, 16], [5e-3; 3]);
        assert_eq!(x, Vector3::zeros());
    }
}
