#![forbid(unsafe_code)]

pub mod analytic;
pub mod assembly;
pub mod continuation;
pub mod mesh;
pub mod scalar;
pub mod sparse;
pub mod spectrum;

pub use scalar::{Real, Scalar};
