//! Partially specified spatial autoregressive models whose unknown covariate
//! effect is approximated by a single-hidden-layer logistic network.

pub mod density;
pub mod error;
pub mod fit;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod simulation;
pub mod weights;

pub use density::DensityFamily;
pub use error::{Error, Result};
pub use fit::{fit, fit_alternating, fit_joint, FitMode, FitOptions, FitResult};
pub use model::{canonicalize, residuals, Dataset, Layout, ModelSpec, ParameterVector};
