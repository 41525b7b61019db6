//! Anti-forensic adversarial attacks on fake-image detectors, with
//! perturbations shaped in the YCbCr colour space.

pub mod analysis;
pub mod attack;
pub mod autodiff;
pub mod color;
pub mod data;
pub mod detector;
pub mod error;
pub mod image;
pub mod quality;

pub use error::{Error, Result};
