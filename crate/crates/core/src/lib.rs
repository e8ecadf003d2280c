//! Compact Transformer forecasters for univariate series, a stability
//! constrained Koopman forecaster, and a synthetic benchmark harness.

pub mod adam;
pub mod bench;
pub mod blocks;
pub mod dynsys;
pub mod error;
pub mod gradcheck;
pub mod koopman;
pub mod linalg;
pub mod models;
pub mod params;
pub mod probsparse;
pub mod rng;
pub mod signals;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
