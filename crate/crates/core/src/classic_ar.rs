//! Ordinary least-squares AR(p) fit ("Classic-AR").
//!
//! The normal equations are formed from the lag columns, centered when an
//! intercept is fitted, Jacobi-scaled to unit diagonal and solved with a
//! Cholesky factorization. Forming the Gram matrix is the `O(p^2 N)` step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ArError, Result};
use crate::timeseries::LaggedDataset;

/// Systems whose scaled condition number exceeds this are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fitter {
    LeastSquares,
    #[serde(rename = "SGD")]
    Sgd,
}

impl Fitter {
    pub fn label(self) -> &'static str {
        match self {
            Fitter::LeastSquares => "LeastSquares",
            Fitter::Sgd => "SGD",
        }
    }
}

impl std::fmt::Display for Fitter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Fitter {
    type Err = ArError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leastsquares" | "least-squares" | "ls" | "classic" | "ols" => Ok(Fitter::LeastSquares),
            "sgd" | "arnet" | "ar-net" => Ok(Fitter::Sgd),
            other => Err(ArError::invalid(format!("unknown fitter `{other}`"))),
        }
    }
}

/// A fitted AR(p) model. Coefficients are most-recent-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ARFit {
    pub order: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub fitter: Fitter,
    /// Mean squared one-step residual over the training rows, in data units.
    pub train_loss: f64,
    pub wall_time_seconds: f64,
    /// Per-epoch mean training objective (SGD only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
    /// Condition number of the scaled normal matrix (least squares only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
}

impl ARFit {
    /// Fit with the given parameters and no diagnostics, e.g. the true process.
    pub fn from_parameters(coefficients: Vec<f64>, intercept: f64, fitter: Fitter) -> Self {
        ARFit {
            order: coefficients.len(),
            intercept,
            coefficients,
            fitter,
            train_loss: 0.0,
            wall_time_seconds: 0.0,
            trace: Vec::new(),
            condition_number: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.coefficients.len() != self.order {
            return Err(ArError::invalid(format!(
                "fit declares order {} but carries {} coefficients",
                self.order,
                self.coefficients.len()
            )));
        }
        if self.coefficients.iter().any(|w| !w.is_finite()) || !self.intercept.is_finite() {
            return Err(ArError::invalid("fit parameters must be finite"));
        }
        Ok(())
    }

    /// One-step forecast `c + sum_i w_i lags_i`.
    pub fn predict(&self, lags: &[f64]) -> Result<f64> {
        if lags.len() != self.order {
            return Err(ArError::invalid(format!(
                "expected {} lags, got {}",
                self.order,
                lags.len()
            )));
        }
        Ok(self.predict_unchecked(lags))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, lags: &[f64]) -> f64 {
        self.intercept + dot(&self.coefficients, lags)
    }

    /// Mean squared one-step residual over `dataset`.
    pub fn mse_on(&self, dataset: &LaggedDataset) -> Result<f64> {
        if dataset.order() != self.order {
            return Err(ArError::invalid(format!(
                "dataset order {} does not match fit order {}",
                dataset.order(),
                self.order
            )));
        }
        Ok(mean_squared_residual(
            dataset,
            &self.coefficients,
            self.intercept,
        ))
    }
}

pub fn predict_one_step(fit: &ARFit, lags: &[f64]) -> Result<f64> {
    fit.predict(lags)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn mean_squared_residual(dataset: &LaggedDataset, w: &[f64], c: f64) -> f64 {
    let n = dataset.n_rows();
    let sse: f64 = (0..n)
        .map(|i| {
            let r = dataset.targets()[i] - c - dot(w, dataset.row(i));
            r * r
        })
        .sum();
    sse / n as f64
}

/// Least-squares fit of `y_t = c + w . lags_t` over every row of `dataset`.
pub fn fit_least_squares(dataset: &LaggedDataset, include_intercept: bool) -> Result<ARFit> {
    let start = Instant::now();
    let p = dataset.order();
    let n = dataset.n_rows();
    if n < p + 1 {
        return Err(ArError::InsufficientData(format!(
            "least squares needs at least {} rows for order {p}, got {n}",
            p + 1
        )));
    }
    if !dataset.is_finite() {
        return Err(ArError::invalid("dataset contains non-finite values"));
    }

    let (gram, rhs, col_means, target_mean) = normal_equations(dataset, include_intercept);
    let (coefficients, condition) = solve_scaled_spd(gram, rhs, p)?;

    let intercept = if include_intercept {
        target_mean - dot(&coefficients, &col_means)
    } else {
        0.0
    };
    let train_loss = mean_squared_residual(dataset, &coefficients, intercept);
    let wall_time_seconds = start.elapsed().as_secs_f64();

    Ok(ARFit {
        order: p,
        intercept,
        coefficients,
        fitter: Fitter::LeastSquares,
        train_loss,
        wall_time_seconds,
        trace: Vec::new(),
        condition_number: Some(condition),
    })
}

/// Returns the (centered when `center`) Gram matrix and right-hand side in
/// row-major `p x p` layout, plus the original column and target means.
fn normal_equations(dataset: &LaggedDataset, center: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let p = dataset.order();
    let n = dataset.n_rows();
    let nf = n as f64;

    let col_means: Vec<f64> = (0..p)
        .map(|j| dataset.column_rev(j).iter().sum::<f64>() / nf)
        .collect();
    let target_mean = dataset.targets_rev().iter().sum::<f64>() / nf;

    // Shifting every value by one constant keeps the slopes and makes the
    // remaining centering correction small.
    let (shifted, shift);
    let view = if center {
        shift = dataset.value_stats().map(|s| s.mean).unwrap_or(target_mean);
        shifted = dataset.map_values(|v| v - shift);
        &shifted
    } else {
        shift = 0.0;
        dataset
    };

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let targets = view.targets_rev();
    for j in 0..p {
        let cj = view.column_rev(j);
        for k in j..p {
            let g = dot(cj, view.column_rev(k));
            gram[j * p + k] = g;
            gram[k * p + j] = g;
        }
        rhs[j] = dot(cj, targets);
    }

    if center {
        let m: Vec<f64> = col_means.iter().map(|v| v - shift).collect();
        let ty = target_mean - shift;
        for j in 0..p {
            for k in 0..p {
                gram[j * p + k] -= nf * m[j] * m[k];
            }
            rhs[j] -= nf * m[j] * ty;
        }
    }
    (gram, rhs, col_means, target_mean)
}

/// Solves `G w = b` for symmetric positive definite `G` after scaling to unit
/// diagonal. Returns the solution and the scaled 2-norm condition number.
fn solve_scaled_spd(mut gram: Vec<f64>, rhs: Vec<f64>, p: usize) -> Result<(Vec<f64>, f64)> {
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let d = gram[j * p + j];
        if !(d > 0.0) || !d.is_finite() {
            return Err(ArError::SingularSystem {
                condition: f64::INFINITY,
                reason: format!("lag column {} has zero variance", j + 1),
            });
        }
        scale[j] = d.sqrt();
    }
    for j in 0..p {
        for k in 0..p {
            gram[j * p + k] /= scale[j] * scale[k];
        }
    }
    let scaled = gram.clone();
    let chol = cholesky_in_place(gram, p).map_err(|pivot| ArError::SingularSystem {
        condition: f64::INFINITY,
        reason: format!(
            "normal matrix is not positive definite at lag {}",
            pivot + 1
        ),
    })?;

    let condition = condition_estimate(&scaled, &chol, p);
    if !(condition <= MAX_CONDITION) {
        return Err(ArError::SingularSystem {
            condition,
            reason: "lag columns are (nearly) collinear".into(),
        });
    }

    let b: Vec<f64> = rhs.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let u = cholesky_solve(&chol, &b, p);
    Ok((
        u.iter().zip(&scale).map(|(u, s)| u / s).collect(),
        condition,
    ))
}

/// Lower-triangular Cholesky factor, row-major. `Err(j)` names the failing pivot.
fn cholesky_in_place(mut a: Vec<f64>, p: usize) -> std::result::Result<Vec<f64>, usize> {
    for j in 0..p {
        let mut d = a[j * p + j];
        d -= dot(&a[j * p..j * p + j], &a[j * p..j * p + j]);
        if !(d > 0.0) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let (upper, lower) = a.split_at_mut(i * p);
            let s = dot(&lower[..j], &upper[j * p..j * p + j]);
            lower[j] = (lower[j] - s) / d;
        }
        for k in j + 1..p {
            a[j * p + k] = 0.0;
        }
    }
    Ok(a)
}

fn cholesky_solve(l: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        y[i] = (b[i] - dot(&l[i * p..i * p + i], &y[..i])) / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}

/// Ratio of extreme eigenvalues via power and inverse iteration.
fn condition_estimate(a: &[f64], chol: &[f64], p: usize) -> f64 {
    const ITERS: usize = 40;
    let start: Vec<f64> = (0..p)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64)
        .collect();

    let normalize = |v: &mut Vec<f64>| {
        let norm = dot(v, v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    };

    let mut v = start.clone();
    normalize(&mut v);
    let mut lambda_max = 0.0;
    for _ in 0..ITERS {
        let mut next: Vec<f64> = (0..p).map(|i| dot(&a[i * p..(i + 1) * p], &v)).collect();
        lambda_max = dot(&next, &v);
        normalize(&mut next);
        v = next;
    }

    let mut v = start;
    normalize(&mut v);
    let mut inv_max = 0.0;
    for _ in 0..ITERS {
        let mut next = cholesky_solve(chol, &v, p);
        inv_max = dot(&next, &v);
        if !inv_max.is_finite() {
            return f64::INFINITY;
        }
        normalize(&mut next);
        v = next;
    }
    if inv_max <= 0.0 {
        return f64::INFINITY;
    }
    lambda_max * inv_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{generate_ar_series, make_lagged_dataset, ARProcessSpec, TimeSeries};

    fn dataset(values: Vec<f64>, p: usize) -> LaggedDataset {
        make_lagged_dataset(&TimeSeries::new(values).unwrap(), p).unwrap()
    }

    #[test]
    fn noiseless_ar2_is_recovered_exactly() {
        let spec = ARProcessSpec::new(vec![0.5, -0.3], 0.0, 0.0).unwrap();
        let s = generate_ar_series(&spec, 502, 0, 4).unwrap();
        let d = make_lagged_dataset(&s, 2).unwrap();
        assert_eq!(d.n_rows(), 500);
        let fit = fit_least_squares(&d, true).unwrap();
        assert!(
            (fit.coefficients[0] - 0.5).abs() < 1e-8,
            "{:?}",
            fit.coefficients
        );
        assert!(
            (fit.coefficients[1] + 0.3).abs() < 1e-8,
            "{:?}",
            fit.coefficients
        );
        assert!(fit.intercept.abs() < 1e-8);
        assert!(fit.trace.is_empty());
    }

    #[test]
    fn constant_target_goes_to_intercept() {
        let mut values = vec![1.0];
        values.extend(std::iter::repeat_n(4.0, 30));
        let fit = fit_least_squares(&dataset(values, 1), true).unwrap();
        assert!((fit.intercept - 4.0).abs() < 1e-9, "{}", fit.intercept);
        assert!(fit.coefficients[0].abs() < 1e-9);
        assert!(fit.train_loss < 1e-18);
    }

    #[test]
    fn constant_series_is_singular() {
        let d = dataset(vec![3.0; 50], 2);
        match fit_least_squares(&d, true) {
            Err(ArError::SingularSystem { condition, .. }) => assert!(condition.is_infinite()),
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn collinear_lags_report_condition() {
        // Noiseless AR(1): lag 2 is an exact multiple of lag 1's recursion.
        let spec = ARProcessSpec::new(vec![0.5, 0.0, 0.0], 0.0, 0.0).unwrap();
        let s = generate_ar_series(&spec, 60, 10, 1).unwrap();
        let d = make_lagged_dataset(&s, 3).unwrap();
        assert!(matches!(
            fit_least_squares(&d, false),
            Err(ArError::SingularSystem { .. })
        ));
    }

    #[test]
    fn underdetermined_is_rejected() {
        let d = dataset(vec![1.0, 2.0, 0.5, 4.0], 2);
        assert!(matches!(
            fit_least_squares(&d, true),
            Err(ArError::InsufficientData(_))
        ));
    }

    #[test]
    fn prediction_examples() {
        let fit = ARFit::from_parameters(vec![0.5], 0.0, Fitter::LeastSquares);
        assert_eq!(predict_one_step(&fit, &[2.0]).unwrap(), 1.0);
        let fit = ARFit::from_parameters(vec![0.2, 0.3, -0.5], 0.0, Fitter::LeastSquares);
        assert!(predict_one_step(&fit, &[1.0, 1.0, 1.0]).unwrap().abs() < 1e-15);
        let fit = ARFit::from_parameters(vec![0.0; 4], 2.5, Fitter::Sgd);
        assert_eq!(predict_one_step(&fit, &[9.0, -3.0, 1.0, 7.0]).unwrap(), 2.5);
        assert!(predict_one_step(&fit, &[1.0]).is_err());
    }

    #[test]
    fn fit_json_has_the_documented_fields() {
        let fit = ARFit::from_parameters(vec![0.1, 0.2], 0.5, Fitter::Sgd);
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        for key in [
            "order",
            "intercept",
            "coefficients",
            "fitter",
            "train_loss",
            "wall_time_seconds",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["fitter"], "SGD");
        let back: ARFit = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn cholesky_matches_a_hand_solve() {
        // [[4, 2], [2, 3]] x = [2, 1]  ->  x = [0.5, 0]
        let l = cholesky_in_place(vec![4.0, 2.0, 2.0, 3.0], 2).unwrap();
        let x = cholesky_solve(&l, &[2.0, 1.0], 2);
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
        assert_eq!(cholesky_in_place(vec![1.0, 2.0, 2.0, 1.0], 2), Err(1));
    }

    #[test]
    fn condition_of_a_diagonal_matrix() {
        let a = vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.01];
        let l = cholesky_in_place(a.clone(), 3).unwrap();
        let c = condition_estimate(&a, &l, 3);
        assert!((c - 100.0).abs() < 1e-6, "{c}");
    }
}
