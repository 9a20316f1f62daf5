//! Numerical laboratory for the semilinear Schrodinger model
//! `(i d_t + Laplacian + p) u + q N(u, conj u) = 0`: spectral forward solver,
//! high-order linearizations, Carleman/parabolic weights, FBI transform, and
//! inverse-stability experiments.

pub mod carleman;
pub mod error;
pub mod fbi;
pub mod field;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod linearization;
pub mod manifest;
pub mod nonlinearity;
pub mod report;
pub mod runner;
pub mod spectral;

pub use error::{LabError, Result};
