//! Dual-domain reconstruction of undersampled Cartesian MRI.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod feasibility;
pub mod fourier;
pub mod io;
pub mod model;
pub mod train;

pub use error::{Error, Result};
