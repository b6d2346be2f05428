//! Simulation of a trait density under quadratic selection toward a moving
//! optimum and Gaussian mutation, with run-time verification of the a-priori
//! bounds that guarantee global existence.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod certificates;
pub mod config;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod kernel;
pub mod output;
pub mod selection;
pub mod waveframe;

pub use error::FieldError;
pub use grid::{DensityField, Grid, SupNorms};
pub use integrator::{run, Model, RunError, RunOptions, Scheme, StepConfig, Trajectory};
pub use kernel::{ConvolutionMethod, Convolver, MutationKernel};
pub use selection::ModelParams;
