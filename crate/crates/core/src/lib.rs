//! Numerical toolkit for the reducibility of the linearized gravity-capillary
//! water-wave operator at quasi-periodic standing waves.

pub mod chain;
pub mod dn;
pub mod error;
pub mod family;
pub mod flow;
pub mod fourier;
pub mod grid;
pub mod kam;
pub mod linalg;
pub mod linop;
pub mod measure;
pub mod operator;
pub mod psido;
pub mod spectral;

pub use error::{Error, Result};
