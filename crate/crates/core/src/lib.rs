//! Amortized pose inference with modulo losses.
//!
//! The crate covers the 1D inverse-rendering problem with unknown angles
//! (crop datasets, a coordinate field, a convolutional encoder and the
//! modulo loss with its ablations) and an analytic sphere scene used to
//! study self-similarity landscapes, regions of attraction and the
//! difficulty of pose estimation under azimuthal equivalence relations.

pub mod analysis;
pub mod autodiff;
pub mod error;
mod io_util;
pub mod model1d;
pub mod rotations;
pub mod scene3d;
pub mod scene1d;
pub mod train1d;

pub use error::{Error, Result};
pub use io_util::fmt_f64;
