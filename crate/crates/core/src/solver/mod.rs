//! Penalized estimation: coordinate descent paths, cross-validated tuning,
//! occurrence indices and the end-to-end fits.

pub mod cv;
pub mod path;
pub mod pipeline;

pub use cv::{cross_validate, fold_assignment, observed_occurrence_index, CvResult};
pub use path::{fit_lambda, fit_path, lambda_grid, lambda_max, PathOptions, PathPoint, PathResult};
pub use pipeline::{
    fit_full_path, fit_linear_uni, fit_lmm_uni, fit_mtmm, prepare, CovarianceMode, FitOptions, FitResult, Prepared,
};
