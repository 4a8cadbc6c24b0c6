//! Identification of sparse multivariable ARX networks by sparse Bayesian
//! learning with combined element and group sparsity priors.

pub mod admm;
pub mod arx;
pub mod cccp;
pub mod dictionary;
pub mod em;
pub mod error;
pub mod expr;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod regression;
pub mod sgl;

pub use error::{Error, Result};
