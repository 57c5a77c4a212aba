//! Mixed-frequency nowcasting of annual series and their temporal
//! disaggregation into monthly estimates.
//!
//! The pipeline runs in two steps. First, annual targets are predicted from
//! lagged targets, monthly search-volume indices and annual macro variables
//! ([`features`], [`neuralnet`], [`baselines`]). Second, the annual figures
//! are spread over months ([`disagg`]) using regression-based disaggregation
//! or elasticities extracted from the trained network ([`explain`]).

pub mod baselines;
pub mod cli;
mod csvout;
pub mod dataio;
pub mod disagg;
pub mod error;
pub mod evalkit;
pub mod explain;
pub mod features;
pub mod model;
pub mod neuralnet;

pub use error::{Error, Result};
