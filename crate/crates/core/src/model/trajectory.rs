use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::pose::RigidPose;

/// Regular 2D sampling pattern `origin + a * step_u + b * step_v` that a trajectory
/// follows sample-by-sample. Lets the forward model evaluate a whole EPI plane as one
/// matrix product instead of per-sample sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: [f64; 3],
    pub step_u: [f64; 3],
    pub step_v: [f64; 3],
    pub shape: [usize; 2],
    /// Lattice index `(a, b)` of each sample.
    pub index: Vec<[usize; 2]>,
}

/// k-space coordinates (rad/m) with per-sample time since excitation (s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    coords: Vec<[f64; 3]>,
    times: Vec<f64>,
    lattice: Option<Lattice>,
}

impl Trajectory {
    pub fn new(coords: Vec<[f64; 3]>, times: Vec<f64>) -> Result<Self> {
        if coords.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "trajectory has {} coordinates but {} times",
                coords.len(),
                times.len()
            )));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("trajectory coordinates".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("trajectory times".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("trajectory times must be strictly increasing".into()));
        }
        Ok(Self { coords, times, lattice: None })
    }

    /// Attaches a lattice description. Every coordinate must match it.
    pub fn with_lattice(mut self, lattice: Lattice) -> Result<Self> {
        if lattice.index.len() != self.coords.len() {
            return Err(Error::InvalidInput("lattice index length mismatch".into()));
        }
        let o = Vector3::from(lattice.origin);
        let u = Vector3::from(lattice.step_u);
        let v = Vector3::from(lattice.step_v);
        let scale = o.norm() + u.norm() * lattice.shape[0] as f64 + v.norm() * lattice.shape[1] as f64;
        for (c, &[a, b]) in self.coords.iter().zip(&lattice.index) {
            if a >= lattice.shape[0] || b >= lattice.shape[1] {
                return Err(Error::InvalidInput("lattice index out of range".into()));
            }
            let expect = o + u * a as f64 + v * b as f64;
            if (Vector3::from(*c) - expect).norm() > 1e-12 * scale.max(1.0) {
                return Err(Error::InvalidInput("coordinates do not follow the lattice".into()));
            }
        }
        self.lattice = Some(lattice);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn coord(&self, n: usize) -> Vector3<f64> {
        Vector3::from(self.coords[n])
    }

    /// Gradient rotation: coordinates are multiplied by the pose's rotation matrix.
    /// Translation and timing are untouched.
    pub fn rotated(&self, pose: &RigidPose) -> Trajectory {
        if pose.angles == [0.0; 3] {
            return self.clone();
        }
        let r = pose.rotation();
        let rot = |c: &[f64; 3]| {
            let v = r * Vector3::from(*c);
            [v.x, v.y, v.z]
        };
        Trajectory {
            coords: self.coords.iter().map(rot).collect(),
            times: self.times.clone(),
            lattice: self.lattice.as_ref().map(|l| Lattice {
                origin: rot(&l.origin),
                step_u: rot(&l.step_u),
                step_v: rot(&l.step_v),
                shape: l.shape,
                index: l.index.clone(),
            }),
        }
    }

    /// Same coordinates with every time shifted by `offset` seconds.
    pub fn delayed(&self, offset: f64) -> Trajectory {
        Trajectory {
            coords: self.coords.clone(),
            times: self.times.iter().map(|t| t + offset).collect(),
            lattice: self.lattice.clone(),
        }
    }

    /// Same coordinates with every time multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Trajectory {
        Trajectory {
            coords: self.coords.clone(),
            times: self.times.iter().map(|t| t * factor).collect(),
            lattice: self.lattice.clone(),
        }
    }
}
