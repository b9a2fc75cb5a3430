//! Bayesian hidden Markov models whose emission densities are mixtures of
//! normalized cubic B-splines, fitted by reversible-jump MCMC over the knot
//! configuration.

pub mod conditional;
pub mod config;
pub mod error;
pub mod hmm;
pub mod io;
pub mod postproc;
pub mod prior;
pub mod sampler;
pub mod selection;
pub mod simgen;
pub mod splines;

pub use conditional::{Bout, BoutSegmentation, PathMode, PipelineConfig};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use hmm::{Dataset, HmmParams};
pub use postproc::Summary;
pub use prior::{InitOptions, PriorConfig};
pub use sampler::{ChainConfig, Schedule, Trace, TuningParams};
pub use selection::SelectionResult;
pub use simgen::GroundTruth;
pub use splines::{KnotConfig, SplineCoeffs};
