//! In vivo radio channel modeling for implant-to-external links.
//!
//! - [`model`]: depth-based path-loss model and its embedded parameter table
//! - [`fitting`]: least-squares and gradient-descent fitting, model comparison
//! - [`dataset`]: measurement-grid datasets, CSV interchange, grid analyses
//! - [`multipath`]: power delay profiles and delay-spread statistics
//! - [`link_budget`]: received power, outage probability, reliable depth
//! - [`cli`]: the `invivo` command-line front end

pub mod cli;
pub mod dataset;
pub mod fitting;
pub mod link_budget;
pub mod model;
pub mod multipath;
pub mod units;

pub use fitting::{compare_models, fit_gd, fit_linear, fit_linear_gd, fit_log_distance, fit_ols, DepthSample, FitError, FitResult, GradientDescent, ModelKind};
pub use model::{
    half_wave_dipole_length_mm, lookup_params, mean_path_loss, sample_path_loss, side_of_angle, BodyArea,
    BodyLocation, Extrapolation, FieldZone, GridAngle, ModelError, PathLossParams,
};
