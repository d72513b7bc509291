//! Brown measure of deformed operator-valued circular elements a + c on a
//! finite atom space: Dyson solver, edge function β, density σ, singular
//! point classification, moment-problem constructions and random-matrix
//! validation.

pub mod constructions;
pub mod density;
pub mod dyson;
pub mod error;
pub mod geometry;
pub mod model;
pub mod rmt;
pub mod roots;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
