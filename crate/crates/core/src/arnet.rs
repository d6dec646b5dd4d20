//! Mini-batch SGD fit of the linear AR(p) model ("AR-Net"), with an optional
//! sparsity-inducing regularizer on the lag coefficients.
//!
//! The objective is `MSE + lambda(s) * R(w)` where `lambda(s) = c_lambda (1/s - 1)`
//! and `R` is either the sigmoid-of-root transform
//! `R(w) = 1/p sum_i [2 / (1 + exp(-c1 |w_i|^(1/c2))) - 1]`
//! or the plain root `R(w) = 1/p sum_i sqrt(|w_i|)`. The intercept is never
//! regularized. Gradients are closed-form.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classic_ar::{dot, mean_squared_residual, ARFit, Fitter};
use crate::error::{ArError, Result};
use crate::timeseries::{make_lagged_dataset, seeded_rng, LaggedDataset, TimeSeries};

/// Magnitude cap on each component of the regularizer gradient.
pub const GRAD_CAP: f64 = 3.0;

/// Epochs of the unregularized pilot fit used to estimate the noise level.
pub const PILOT_EPOCHS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularizerKind {
    None,
    SigmoidRoot,
    SqrtAlt,
}

impl std::str::FromStr for RegularizerKind {
    type Err = ArError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" | "off" => Ok(RegularizerKind::None),
            "sigmoidroot" | "sigmoid" => Ok(RegularizerKind::SigmoidRoot),
            "sqrtalt" | "sqrt" => Ok(RegularizerKind::SqrtAlt),
            _ => Err(ArError::invalid(format!("unknown regularizer `{s}`"))),
        }
    }
}

/// Sparsity regularizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// Estimated fraction of active lags, `s` in `(0, 1]`.
    pub sparsity: f64,
    /// Strength constant. `None` estimates it from the training data as
    /// `sqrt(noise variance) / 100`.
    #[serde(default)]
    pub c_lambda: Option<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            kind: RegularizerKind::None,
            sparsity: 1.0,
            c_lambda: None,
            c1: 3.0,
            c2: 3.0,
        }
    }
}

impl RegularizerConfig {
    pub fn sigmoid_root(sparsity: f64) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::SigmoidRoot,
            sparsity,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(ArError::invalid(format!(
                "sparsity must lie in (0, 1], got {}",
                self.sparsity
            )));
        }
        if let Some(c) = self.c_lambda {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(ArError::invalid(format!("c_lambda must be >= 0, got {c}")));
            }
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) || !self.c1.is_finite() || !self.c2.is_finite() {
            return Err(ArError::invalid("c1 and c2 must be positive"));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.kind != RegularizerKind::None && self.sparsity < 1.0
    }
}

/// `lambda(s) = c_lambda * (1/s - 1)`; zero at `s = 1`. An unset `c_lambda`
/// counts as zero here.
pub fn lambda_strength(reg: &RegularizerConfig) -> Result<f64> {
    reg.validate()?;
    Ok(lambda_with(reg.c_lambda.unwrap_or(0.0), reg.sparsity))
}

fn lambda_with(c_lambda: f64, sparsity: f64) -> f64 {
    c_lambda * (1.0 / sparsity - 1.0)
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() {
        return Err(ArError::invalid(
            "regularizer needs at least one coefficient",
        ));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(ArError::invalid("coefficients must be finite"));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn regularizer_value(theta: &[f64], reg: &RegularizerConfig) -> Result<f64> {
    check_theta(theta)?;
    reg.validate()?;
    Ok(penalty(theta, reg))
}

fn penalty(theta: &[f64], reg: &RegularizerConfig) -> f64 {
    let p = theta.len() as f64;
    match reg.kind {
        RegularizerKind::None => 0.0,
        RegularizerKind::SigmoidRoot => {
            let inv_c2 = 1.0 / reg.c2;
            theta
                .iter()
                .map(|t| 2.0 * sigmoid(reg.c1 * t.abs().powf(inv_c2)) - 1.0)
                .sum::<f64>()
                / p
        }
        RegularizerKind::SqrtAlt => theta.iter().map(|t| t.abs().sqrt()).sum::<f64>() / p,
    }
}

/// Gradient of [`regularizer_value`]: zero at `theta_i == 0`, each component
/// clamped to `GRAD_CAP` in magnitude.
pub fn regularizer_grad(theta: &[f64], reg: &RegularizerConfig) -> Result<Vec<f64>> {
    check_theta(theta)?;
    reg.validate()?;
    let mut out = vec![0.0; theta.len()];
    add_penalty_grad(theta, reg, 1.0, &mut out);
    Ok(out)
}

/// Adds `scale * grad R(theta)` into `out`.
fn add_penalty_grad(theta: &[f64], reg: &RegularizerConfig, scale: f64, out: &mut [f64]) {
    let inv_p = 1.0 / theta.len() as f64;
    let inv_c2 = 1.0 / reg.c2;
    for (g, &t) in out.iter_mut().zip(theta) {
        if t == 0.0 {
            continue;
        }
        let a = t.abs();
        let d = match reg.kind {
            RegularizerKind::None => 0.0,
            RegularizerKind::SigmoidRoot => {
                let sig = sigmoid(reg.c1 * a.powf(inv_c2));
                2.0 * sig * (1.0 - sig) * reg.c1 * inv_c2 * a.powf(inv_c2 - 1.0)
            }
            RegularizerKind::SqrtAlt => 0.5 / a.sqrt(),
        };
        let d = (d * inv_p).min(GRAD_CAP);
        *g += scale * d.copysign(t);
    }
}

/// Batch objective and gradients.
///
/// Returns `(MSE + lambda * R(w), dObjective/dw, dObjective/dc)` where the
/// MSE gradient is `(2/B) X^T (yhat - y)`. `batch_inputs` rows are
/// most-recent-first lag windows.
pub fn loss_and_grad(
    batch_inputs: &[Vec<f64>],
    batch_targets: &[f64],
    coefficients: &[f64],
    intercept: f64,
    lambda: f64,
    reg: &RegularizerConfig,
) -> Result<(f64, Vec<f64>, f64)> {
    if batch_inputs.is_empty() {
        return Err(ArError::invalid("batch must not be empty"));
    }
    if batch_inputs.len() != batch_targets.len() {
        return Err(ArError::invalid(format!(
            "{} input rows but {} targets",
            batch_inputs.len(),
            batch_targets.len()
        )));
    }
    if let Some(row) = batch_inputs.iter().find(|r| r.len() != coefficients.len()) {
        return Err(ArError::invalid(format!(
            "row has {} lags, model has {} coefficients",
            row.len(),
            coefficients.len()
        )));
    }
    if coefficients.is_empty() {
        return Err(ArError::invalid("model needs at least one coefficient"));
    }
    let mut grad = vec![0.0; coefficients.len()];
    let rows = batch_inputs
        .iter()
        .map(Vec::as_slice)
        .zip(batch_targets.iter().copied());
    let (mse, grad_c) = mse_grad(rows, coefficients, intercept, &mut grad);
    let mut objective = mse;
    if lambda != 0.0 && reg.kind != RegularizerKind::None {
        objective += lambda * penalty(coefficients, reg);
        add_penalty_grad(coefficients, reg, lambda, &mut grad);
    }
    Ok((objective, grad, grad_c))
}

/// Batch MSE with its gradient written into `grad` (overwritten).
fn mse_grad<'a>(
    rows: impl Iterator<Item = (&'a [f64], f64)>,
    w: &[f64],
    c: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut sse = 0.0;
    let mut grad_c = 0.0;
    let mut count = 0usize;
    for (x, y) in rows {
        let r = c + dot(w, x) - y;
        sse += r * r;
        grad_c += r;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += r * xi;
        }
        count += 1;
    }
    let scale = 2.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (sse / count as f64, grad_c * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// Cosine warm-up from `lr / 25` to `lr` over the first 30% of steps,
    /// then cosine annealing down to `lr / 2.5e5`.
    OneCycle,
}

impl std::str::FromStr for LrSchedule {
    type Err = ArError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "onecycle" | "1cycle" => Ok(LrSchedule::OneCycle),
            _ => Err(ArError::invalid(format!(
                "unknown learning-rate schedule `{s}`"
            ))),
        }
    }
}

impl LrSchedule {
    const WARMUP_FRACTION: f64 = 0.3;
    const INITIAL_DIV: f64 = 25.0;
    const FINAL_DIV: f64 = 1e4;

    /// Learning rate for `step` in `0..total_steps`.
    pub fn rate(self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::OneCycle => {
                let start = base / Self::INITIAL_DIV;
                let end = start / Self::FINAL_DIV;
                let warmup = ((total_steps as f64) * Self::WARMUP_FRACTION).max(1.0);
                let step = step as f64;
                let cos_interp = |from: f64, to: f64, frac: f64| {
                    to + (from - to) * 0.5 * (1.0 + (PI * frac.clamp(0.0, 1.0)).cos())
                };
                if step < warmup {
                    cos_interp(start, base, step / warmup)
                } else {
                    let rest = (total_steps as f64 - warmup).max(1.0);
                    cos_interp(base, end, (step - warmup) / rest)
                }
            }
        }
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub rng_seed: u64,
    pub regularizer: RegularizerConfig,
    /// Train on the standardized series; coefficients are scale-free and the
    /// intercept is mapped back to data units.
    pub standardize: bool,
    pub include_intercept: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_schedule: LrSchedule::OneCycle,
            rng_seed: 0,
            regularizer: RegularizerConfig::default(),
            standardize: true,
            include_intercept: true,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`] and the flat config format.
pub const TRAIN_CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "lr_schedule",
    "rng_seed",
    "regularizer",
    "sparsity",
    "c_lambda",
    "c1",
    "c2",
    "standardize",
    "include_intercept",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ArError::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(ArError::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ArError::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ArError::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        self.regularizer.validate()
    }

    /// Sets one field from its textual value. Keys use `snake_case`; dashes
    /// are accepted in place of underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| ArError::invalid(format!("{key}: cannot parse `{value}`")))
        }
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "epochs" => self.epochs = num(&key, value)?,
            "batch_size" => self.batch_size = num(&key, value)?,
            "learning_rate" => self.learning_rate = num(&key, value)?,
            "momentum" => self.momentum = num(&key, value)?,
            "lr_schedule" => self.lr_schedule = value.trim().parse()?,
            "rng_seed" | "seed" => self.rng_seed = num(&key, value)?,
            "regularizer" => self.regularizer.kind = value.trim().parse()?,
            "sparsity" => self.regularizer.sparsity = num(&key, value)?,
            "c_lambda" => {
                let v = value.trim();
                self.regularizer.c_lambda = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(num(&key, v)?)
                };
            }
            "c1" => self.regularizer.c1 = num(&key, value)?,
            "c2" => self.regularizer.c2 = num(&key, value)?,
            "standardize" => self.standardize = num(&key, value)?,
            "include_intercept" => self.include_intercept = num(&key, value)?,
            other => {
                return Err(ArError::invalid(format!(
                    "unknown training option `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ArError::invalid(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("epochs", self.epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("learning_rate", format!("{:?}", self.learning_rate));
        map.insert("momentum", format!("{:?}", self.momentum));
        map.insert("lr_schedule", format!("{:?}", self.lr_schedule));
        map.insert("rng_seed", self.rng_seed.to_string());
        map.insert("regularizer", format!("{:?}", self.regularizer.kind));
        map.insert("sparsity", format!("{:?}", self.regularizer.sparsity));
        map.insert(
            "c_lambda",
            self.regularizer
                .c_lambda
                .map_or_else(|| "auto".to_string(), |c| format!("{c:?}")),
        );
        map.insert("c1", format!("{:?}", self.regularizer.c1));
        map.insert("c2", format!("{:?}", self.regularizer.c2));
        map.insert("standardize", self.standardize.to_string());
        map.insert("include_intercept", self.include_intercept.to_string());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Reads JSON (when the text starts with `{`) or the flat format.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            return Self::from_key_values(text);
        };
        TrainConfig::validate(&cfg)?;
        Ok(cfg)
    }
}

/// Fits the AR model by mini-batch SGD with momentum.
pub fn fit_sgd(dataset: &LaggedDataset, config: &TrainConfig) -> Result<ARFit> {
    let start = Instant::now();
    config.validate()?;
    let n = dataset.n_rows();
    if n < config.batch_size {
        return Err(ArError::InsufficientData(format!(
            "{n} rows is fewer than one batch of {}",
            config.batch_size
        )));
    }
    if !dataset.is_finite() {
        return Err(ArError::invalid("dataset contains non-finite values"));
    }

    let stats = if config.standardize {
        Some(dataset.value_stats()?)
    } else {
        None
    };
    let scaled;
    let train = match stats {
        Some(s) => {
            scaled = dataset.map_values(|v| s.apply(v));
            &scaled
        }
        None => dataset,
    };

    let reg = config.regularizer;
    let lambda = if reg.is_active() {
        let c_lambda = match reg.c_lambda {
            Some(c) => c,
            None => c_lambda_from_pilot(train, config)?,
        };
        lambda_with(c_lambda, reg.sparsity)
    } else {
        0.0
    };

    let (w, c_scaled, trace) = run_sgd(train, config, lambda)?;

    let intercept = match stats {
        Some(s) => s.std * c_scaled + s.mean * (1.0 - w.iter().sum::<f64>()),
        None => c_scaled,
    };
    let train_loss = mean_squared_residual(dataset, &w, intercept);
    if !train_loss.is_finite() {
        return Err(ArError::Divergence {
            epoch: config.epochs,
            learning_rate: config.learning_rate,
            loss: train_loss,
        });
    }

    Ok(ARFit {
        order: dataset.order(),
        intercept,
        coefficients: w,
        fitter: Fitter::Sgd,
        train_loss,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        trace,
        condition_number: None,
    })
}

/// Core training loop on already-prepared data. Returns the coefficients,
/// intercept and per-epoch mean objective.
fn run_sgd(
    data: &LaggedDataset,
    config: &TrainConfig,
    lambda: f64,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let p = data.order();
    let n = data.n_rows();
    let mut rng = seeded_rng(config.rng_seed);

    let bound = 1.0 / (p as f64).sqrt();
    let mut w: Vec<f64> = (0..p).map(|_| rng.random_range(-bound..bound)).collect();
    let mut c = 0.0;

    let mut vel_w = vec![0.0; p];
    let mut vel_c = 0.0;
    let mut grad = vec![0.0; p];
    let mut order: Vec<usize> = (0..n).collect();

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let reg = config.regularizer;
    let regularize = lambda != 0.0 && reg.kind != RegularizerKind::None;
    let mu = config.momentum;

    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_objective = 0.0;
        for batch in order.chunks(config.batch_size) {
            let lr = config
                .lr_schedule
                .rate(config.learning_rate, step, total_steps);
            let rows = batch.iter().map(|&i| (data.row(i), data.targets()[i]));
            let (mse, grad_c) = mse_grad(rows, &w, c, &mut grad);
            let mut objective = mse;
            if regularize {
                objective += lambda * penalty(&w, &reg);
                add_penalty_grad(&w, &reg, lambda, &mut grad);
            }
            if !objective.is_finite() {
                return Err(ArError::Divergence {
                    epoch: epoch + 1,
                    learning_rate: lr,
                    loss: objective,
                });
            }
            epoch_objective += objective * batch.len() as f64;

            for ((wi, vi), gi) in w.iter_mut().zip(vel_w.iter_mut()).zip(&grad) {
                *vi = mu * *vi + gi;
                *wi -= lr * *vi;
            }
            if config.include_intercept {
                vel_c = mu * vel_c + grad_c;
                c -= lr * vel_c;
            }
            step += 1;
        }
        trace.push(epoch_objective / n as f64);
    }
    if w.iter().any(|v| !v.is_finite()) || !c.is_finite() {
        return Err(ArError::Divergence {
            epoch: config.epochs,
            learning_rate: config.learning_rate,
            loss: f64::NAN,
        });
    }
    Ok((w, c, trace))
}

/// `sqrt(L) / 100` with `L` the training MSE of a short unregularized fit.
fn c_lambda_from_pilot(data: &LaggedDataset, config: &TrainConfig) -> Result<f64> {
    let pilot = TrainConfig {
        epochs: PILOT_EPOCHS,
        regularizer: RegularizerConfig::default(),
        ..*config
    };
    let (w, c, _) = run_sgd(data, &pilot, 0.0)?;
    Ok(mean_squared_residual(data, &w, c).sqrt() / 100.0)
}

/// Regularization constant `sqrt(L) / 100` for a training series, where `L`
/// is the noise variance estimated by a short unregularized order-`order`
/// SGD fit with default hyperparameters. Returned in the series' own units.
pub fn default_c_lambda(train_series: &TimeSeries, order: usize) -> Result<f64> {
    if train_series.len() < 2 {
        return Err(ArError::invalid("need at least two observations"));
    }
    let order = order.clamp(1, train_series.len() - 1);
    let data = make_lagged_dataset(train_series, order)?;
    let config = TrainConfig {
        epochs: PILOT_EPOCHS,
        batch_size: TrainConfig::default().batch_size.min(data.n_rows()),
        ..TrainConfig::default()
    };
    let fit = fit_sgd(&data, &config)?;
    Ok(fit.train_loss.sqrt() / 100.0)
}
