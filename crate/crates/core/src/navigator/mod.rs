//! Orbital navigators, self-calibrated linear model and per-shot estimation.

pub mod model;
pub mod orbit;
pub mod trace;

pub use model::{calibrate, estimate, ModelMatrix};
pub use orbit::make_orbital_trajectory;
pub use trace::ParameterTrace;
