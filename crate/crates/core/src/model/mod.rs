//! Geometric and parametric types shared by every stage.

pub mod pose;
pub mod timing;
pub mod trajectory;

pub use pose::{ParameterVector, RigidPose};
pub use timing::TimingConfig;
pub use trajectory::{Lattice, Trajectory};
