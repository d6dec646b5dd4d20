//! Coefficient-recovery and one-step forecast metrics.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classic_ar::ARFit;
use crate::error::{ArError, Result};
use crate::timeseries::TimeSeries;

/// Threshold below which a standardized-scale weight counts as zero.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.02;

/// Symmetric total percentage error between two coefficient vectors:
/// `100 * sum |a_i - b_i| / sum (|a_i| + |b_i|)`. The shorter vector is
/// zero-padded. Intercepts are not part of either vector.
pub fn stpe(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    let len = estimated.len().max(truth.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..len {
        let (a, b) = (at(estimated, i), at(truth, i));
        if !a.is_finite() || !b.is_finite() {
            return Err(ArError::invalid("coefficients must be finite"));
        }
        num += (a - b).abs();
        den += a.abs() + b.abs();
    }
    if den == 0.0 {
        return Err(ArError::UndefinedMetric(
            "sTPE is 0/0 when both coefficient vectors are zero".into(),
        ));
    }
    Ok((100.0 * (num / den)).min(100.0))
}

/// One-step-ahead prediction for every test value, always from the true
/// preceding observations. Returns `(actual, predicted)` pairs.
pub fn one_step_predictions(
    fit: &ARFit,
    test: &TimeSeries,
    context: &TimeSeries,
) -> Result<Vec<(f64, f64)>> {
    fit.validate()?;
    let p = fit.order;
    if context.len() < p {
        return Err(ArError::invalid(format!(
            "context has {} values, the order-{p} model needs {p}",
            context.len()
        )));
    }
    // history[k] is the value k steps before the first test value, k >= 1,
    // laid out so that each window is a contiguous most-recent-first slice.
    let mut rev: Vec<f64> = test.values().iter().rev().copied().collect();
    rev.extend(context.values().iter().rev().take(p));
    let n = test.len();
    Ok((0..n)
        .map(|t| {
            // Test index t sits at rev[n - 1 - t]; its lags follow it.
            let pos = n - 1 - t;
            let lags = &rev[pos + 1..pos + 1 + p];
            (test.values()[t], fit.predict_unchecked(lags))
        })
        .collect())
}

/// Mean squared one-step-ahead error over `test`, using the tail of
/// `context` as the lags for the first `p` test values.
pub fn forecast_mse(fit: &ARFit, test: &TimeSeries, context: &TimeSeries) -> Result<f64> {
    let pairs = one_step_predictions(fit, test, context)?;
    Ok(pairs
        .iter()
        .map(|(y, yhat)| (y - yhat).powi(2))
        .sum::<f64>()
        / pairs.len() as f64)
}

/// 1-based lag indices whose fitted weight has magnitude `>= threshold`.
pub fn recovered_support(fit: &ARFit, threshold: f64) -> Result<BTreeSet<usize>> {
    support_of(&fit.coefficients, threshold)
}

pub fn support_of(coefficients: &[f64], threshold: f64) -> Result<BTreeSet<usize>> {
    if !(threshold > 0.0) {
        return Err(ArError::invalid(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }
    Ok(coefficients
        .iter()
        .enumerate()
        .filter(|(_, w)| w.abs() >= threshold)
        .map(|(i, _)| i + 1)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ResidualSummary {
    fn of(residuals: &[f64]) -> Self {
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        ResidualSummary {
            mean,
            std: var.sqrt(),
            min: residuals.iter().copied().fold(f64::INFINITY, f64::min),
            max: residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Present only when true coefficients were supplied.
    pub stpe: Option<f64>,
    pub test_mse: f64,
    pub recovered_support: BTreeSet<usize>,
    pub residual_summary: ResidualSummary,
}

/// Per-test-index forecast record, as exported to CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub index: usize,
    pub actual: f64,
    pub predicted: f64,
}

impl ResidualRow {
    pub fn residual(&self) -> f64 {
        self.actual - self.predicted
    }
}

/// Full evaluation: forecast error, optional coefficient error and support.
pub fn evaluate(
    fit: &ARFit,
    test: &TimeSeries,
    context: &TimeSeries,
    truth: Option<&[f64]>,
    threshold: f64,
) -> Result<(EvaluationReport, Vec<ResidualRow>)> {
    let pairs = one_step_predictions(fit, test, context)?;
    let rows: Vec<ResidualRow> = pairs
        .iter()
        .enumerate()
        .map(|(index, &(actual, predicted))| ResidualRow {
            index,
            actual,
            predicted,
        })
        .collect();
    let residuals: Vec<f64> = rows.iter().map(ResidualRow::residual).collect();
    let test_mse = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    let report = EvaluationReport {
        stpe: truth.map(|t| stpe(&fit.coefficients, t)).transpose()?,
        test_mse,
        recovered_support: recovered_support(fit, threshold)?,
        residual_summary: ResidualSummary::of(&residuals),
    };
    Ok((report, rows))
}

/// Writes `index,actual,predicted,residual` rows.
pub fn write_residuals_csv(rows: &[ResidualRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "index,actual,predicted,residual")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.index,
            r.actual,
            r.predicted,
            r.residual()
        )?;
    }
    out.flush()?;
    Ok(())
}
