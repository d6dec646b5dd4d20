//! Auto-regressive model fitting two ways: ordinary least squares
//! ([`classic_ar`]) and mini-batch SGD on the same linear model with an
//! optional sparsity regularizer ([`arnet`]), plus synthetic data generation,
//! recovery metrics and reproducible experiment sweeps.

// `!(x > 0.0)` deliberately treats NaN as out of range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arnet;
pub mod classic_ar;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod timeseries;

pub use arnet::{
    default_c_lambda, fit_sgd, lambda_strength, loss_and_grad, regularizer_grad, regularizer_value,
    LrSchedule, RegularizerConfig, RegularizerKind, TrainConfig,
};
pub use classic_ar::{fit_least_squares, predict_one_step, ARFit, Fitter};
pub use error::{ArError, Result};
pub use metrics::{evaluate, forecast_mse, recovered_support, stpe, EvaluationReport};
pub use timeseries::{
    generate_ar_series, generate_ar_series_from, make_lagged_dataset, sample_coefficients,
    split_series, standardize, ARProcessSpec, LaggedDataset, NormalizationStats, TimeSeries,
};
