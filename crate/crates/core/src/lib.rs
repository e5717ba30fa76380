//! Self-reference phase-shifting interferometry.

pub mod error;
pub mod extract;
pub mod fft;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod metrics;
pub mod noise;
pub mod optics;
pub mod phantoms;
pub mod propagate;
pub mod refine;
pub mod shiftgraph;

pub use error::{Error, Result};
