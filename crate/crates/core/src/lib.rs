//! Crowd counting with a pyramidal scale module, a global context gate and
//! Bayesian plus counting supervision, on a small reverse-mode tensor engine.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod params;
pub mod supervision;
pub mod tensor;
pub mod train;
pub mod verify;

pub use data::{AnnotatedScene, DensityRaster, Point};
pub use error::{Error, Result};
pub use model::{Pscnet, PscnetConfig};
pub use params::ModelParams;
pub use tensor::{Scalar, Tape, Tensor, Var};
