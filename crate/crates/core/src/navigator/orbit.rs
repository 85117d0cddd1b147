use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::Trajectory;

/// Three sequential circles of radius `knav` (rad/m) about the x, y and z axes, sampled
/// uniformly over `tnav` seconds at times `(n + 1/2) tnav / n_total` from navigator start.
/// Stretching `tnav` only rescales times.
pub fn make_orbital_trajectory(knav: f64, tnav: f64, samples_per_orbit: usize) -> Result<Trajectory> {
    if !(knav > 0.0) || !knav.is_finite() || !(tnav > 0.0) || !tnav.is_finite() {
        return Err(Error::InvalidInput("knav and tnav must be positive".into()));
    }
    if samples_per_orbit < 8 {
        return Err(Error::InvalidInput(format!("samples_per_orbit {samples_per_orbit} < 8")));
    }
    let total = 3 * samples_per_orbit;
    let mut coords = Vec::with_capacity(total);
    for axis in 0..3 {
        for n in 0..samples_per_orbit {
            let (s, c) = (2.0 * PI * n as f64 / samples_per_orbit as f64).sin_cos();
            let (u, v) = (knav * c, knav * s);
            coords.push(match axis {
                0 => [0.0, u, v],
                1 => [v, 0.0, u],
                _ => [u, v, 0.0],
            });
        }
    }
    let dt = tnav / total as f64;
    let times = (0..total).map(|n| (n as f64 + 0.5) * dt).collect();
    Trajectory::new(coords, times)
}
