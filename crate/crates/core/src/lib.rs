//! EEG-driven reaction-time prediction with a dynamically weighted ensemble
//! of support vector regressors.

pub mod clustering;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod mixture;
pub mod provenance;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod svr;
pub mod synthgen;

pub use error::{Error, ErrorCategory, Result};
