//! Segmented 3D EPI simulation with servo navigation, navigator-based phase correction
//! and self-navigated phase equalization against peer shots.

pub mod equalize;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod model;
pub mod navcorr;
pub mod navigator;
pub mod servo;
pub mod recon;
pub mod sim;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
