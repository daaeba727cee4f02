//! PAC-Bayes generalization bounds for linear autoencoders and multivariate linear regression.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod ease;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lae_bound;
pub mod metrics;
pub mod mlr_bound;
pub mod numerics;
pub mod oracle;
pub mod verify;

pub use error::{Error, Result};
