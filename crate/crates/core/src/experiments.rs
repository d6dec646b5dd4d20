//! Reproducible experiment sweeps comparing the least-squares and SGD fitters:
//! dense coefficient recovery, sparse recovery with oversized models, small
//! training sets, and fit-time scaling in the model order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arnet::{fit_sgd, RegularizerKind, TrainConfig};
use crate::classic_ar::{fit_least_squares, ARFit, Fitter};
use crate::error::{ArError, Result};
use crate::metrics::{forecast_mse, stpe};
use crate::timeseries::{
    default_burn_in, generate_ar_series, make_lagged_dataset, sample_coefficients, split_series,
    ARProcessSpec, TimeSeries, DEFAULT_ABS_SUM,
};

/// True coefficients of the fixed sparse-sweep process.
pub const SPARSE_SWEEP_TRUTH: [f64; 3] = [0.2, 0.3, -0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentName {
    DenseSweep,
    SparseSweep,
    SmallData,
    Timing,
}

impl ExperimentName {
    pub fn slug(self) -> &'static str {
        match self {
            ExperimentName::DenseSweep => "dense-sweep",
            ExperimentName::SparseSweep => "sparse-sweep",
            ExperimentName::SmallData => "small-data",
            ExperimentName::Timing => "timing",
        }
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = ArError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dense-sweep" | "densesweep" | "dense" => Ok(ExperimentName::DenseSweep),
            "sparse-sweep" | "sparsesweep" | "sparse" => Ok(ExperimentName::SparseSweep),
            "small-data" | "smalldata" | "small" => Ok(ExperimentName::SmallData),
            "timing" => Ok(ExperimentName::Timing),
            other => Err(ArError::invalid(format!("unknown experiment `{other}`"))),
        }
    }
}

impl std::fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

/// Full description of one sweep. Every record is reproducible from this
/// value alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub p_values: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub repeats: usize,
    pub noise_std: f64,
    /// Fixed generating process; dense sweeps sample a fresh one per record.
    #[serde(default)]
    pub true_process: Option<ARProcessSpec>,
    pub fitters: Vec<Fitter>,
    pub train_config: TrainConfig,
    pub seed: u64,
    /// Absolute coefficient mass for dense-sweep sampling.
    #[serde(default = "default_abs_sum")]
    pub abs_sum: f64,
    /// Sparsity estimate handed to the regularized SGD fitter; `None` uses
    /// the true ratio of active lags to model order.
    #[serde(default)]
    pub sparsity: Option<f64>,
    /// Worker threads for metric sweeps; `None` uses the rayon default.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_abs_sum() -> f64 {
    DEFAULT_ABS_SUM
}

impl ExperimentSpec {
    fn base(name: ExperimentName, p_values: Vec<usize>) -> Self {
        ExperimentSpec {
            name,
            p_values,
            n_train: 20_000,
            n_test: 5_000,
            repeats: 10,
            noise_std: 1.0,
            true_process: None,
            fitters: vec![Fitter::LeastSquares, Fitter::Sgd],
            train_config: TrainConfig::default(),
            seed: 0,
            abs_sum: DEFAULT_ABS_SUM,
            sparsity: None,
            threads: None,
        }
    }

    /// Model order equals the true order; coefficients resampled per record.
    pub fn dense_sweep() -> Self {
        Self::base(
            ExperimentName::DenseSweep,
            vec![1, 2, 3, 5, 7, 10, 15, 20, 25],
        )
    }

    /// Fixed AR(3) process, increasingly oversized models.
    pub fn sparse_sweep() -> Self {
        let mut spec = Self::base(ExperimentName::SparseSweep, vec![3, 10, 30, 100, 300, 1000]);
        spec.true_process = Some(ARProcessSpec {
            coefficients: SPARSE_SWEEP_TRUTH.to_vec(),
            intercept: 0.0,
            noise_std: 1.0,
        });
        spec.train_config.regularizer.kind = RegularizerKind::SigmoidRoot;
        spec
    }

    /// 1000 training and 1000 test samples from an AR(10) process whose only
    /// non-zero lags are 1, 3 and 10, fitted with order 20.
    ///
    /// With a thousand rows the noise-based default `c_lambda` is too weak to
    /// prune the spurious lags, so this scenario sets it explicitly and
    /// trains for more epochs (one epoch is only eight batches).
    pub fn small_data() -> Self {
        let mut spec = Self::base(ExperimentName::SmallData, vec![20]);
        spec.n_train = 1000;
        spec.n_test = 1000;
        let mut w = vec![0.0; 10];
        w[0] = 0.2;
        w[2] = 0.3;
        w[9] = -0.5;
        spec.true_process = Some(ARProcessSpec {
            coefficients: w,
            intercept: 0.0,
            noise_std: 1.0,
        });
        spec.train_config.epochs = 100;
        spec.train_config.regularizer.kind = RegularizerKind::SigmoidRoot;
        spec.train_config.regularizer.c_lambda = Some(0.1);
        spec
    }

    /// Fit-time measurements over doubling model orders.
    pub fn timing() -> Self {
        let mut spec = Self::base(ExperimentName::Timing, vec![10, 20, 40, 80, 160, 320]);
        spec.repeats = 5;
        spec
    }

    pub fn preset(name: ExperimentName) -> Self {
        match name {
            ExperimentName::DenseSweep => Self::dense_sweep(),
            ExperimentName::SparseSweep => Self::sparse_sweep(),
            ExperimentName::SmallData => Self::small_data(),
            ExperimentName::Timing => Self::timing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(ArError::invalid("repeats must be >= 1"));
        }
        if self.p_values.is_empty() {
            return Err(ArError::invalid("p_values must not be empty"));
        }
        if self.p_values[0] == 0 || self.p_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ArError::invalid(
                "p_values must be positive and strictly increasing",
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(ArError::invalid("n_train and n_test must be >= 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ArError::invalid("noise_std must be >= 0"));
        }
        if self.fitters.is_empty() {
            return Err(ArError::invalid("at least one fitter is required"));
        }
        if !(self.abs_sum > 0.0 && self.abs_sum <= 1.0) {
            return Err(ArError::invalid("abs_sum must lie in (0, 1]"));
        }
        if let Some(tp) = &self.true_process {
            tp.validate()?;
        }
        if let Some(s) = self.sparsity {
            if !(s > 0.0 && s <= 1.0) {
                return Err(ArError::invalid("sparsity must lie in (0, 1]"));
            }
        }
        if self.threads == Some(0) {
            return Err(ArError::invalid("threads must be >= 1"));
        }
        self.train_config.validate()?;
        let max_p = *self.p_values.last().unwrap();
        if self.n_train <= max_p + 1 {
            return Err(ArError::invalid(format!(
                "n_train = {} is too small for model order {max_p}",
                self.n_train
            )));
        }
        if matches!(
            self.name,
            ExperimentName::SparseSweep | ExperimentName::SmallData
        ) {
            let truth = self.fixed_truth()?;
            if let Some(p) = self.p_values.iter().find(|&&p| p < truth.order()) {
                return Err(ArError::invalid(format!(
                    "model order {p} is below the true order {}",
                    truth.order()
                )));
            }
        }
        Ok(())
    }

    /// Generating process for sweeps that keep it fixed, with the sweep's
    /// noise level.
    fn fixed_truth(&self) -> Result<ARProcessSpec> {
        let mut truth = match (&self.true_process, self.name) {
            (Some(tp), _) => tp.clone(),
            (None, ExperimentName::SparseSweep) => ARProcessSpec {
                coefficients: SPARSE_SWEEP_TRUTH.to_vec(),
                intercept: 0.0,
                noise_std: self.noise_std,
            },
            (None, ExperimentName::SmallData) => Self::small_data()
                .true_process
                .expect("small-data preset carries its process"),
            (None, _) => {
                return Err(ArError::invalid(format!(
                    "{} needs a true process",
                    self.name
                )))
            }
        };
        truth.noise_std = self.noise_std;
        Ok(truth)
    }
}

/// One fitted model in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: ExperimentName,
    pub p_model: usize,
    pub p_true: usize,
    /// Active true lags over model order.
    pub sparsity: f64,
    pub repeat: usize,
    pub seed: u64,
    pub fitter: Fitter,
    pub stpe: f64,
    pub test_mse: f64,
    pub wall_time_seconds: f64,
    /// Set when the fit failed; the metric fields are then NaN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Fitted versus true weight of one lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCoefficient {
    pub lag: usize,
    pub true_w: f64,
    pub fitted_w: f64,
    pub fitter: Fitter,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: ExperimentSpec,
    pub records: Vec<RunRecord>,
    pub coefficients: Vec<LagCoefficient>,
}

/// Deterministic per-record seed from the sweep seed, model order and
/// repeat index (SplitMix64 finalizer over the combined words).
pub fn record_seed(sweep_seed: u64, p: usize, repeat: usize) -> u64 {
    let mut z = sweep_seed
        ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (repeat as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Sampling seed for dense-sweep coefficients, kept apart from the noise seed.
fn coefficient_seed(seed: u64) -> u64 {
    seed.rotate_left(17) ^ 0xA5A5_5A5A_C3C3_3C3C
}

struct Task {
    p_model: usize,
    repeat: usize,
    seed: u64,
    truth: ARProcessSpec,
}

struct Prepared {
    train: TimeSeries,
    test: TimeSeries,
}

fn prepare(spec: &ExperimentSpec, task: &Task) -> Result<Prepared> {
    let series = generate_ar_series(
        &task.truth,
        spec.n_train + spec.n_test,
        default_burn_in(task.truth.order()),
        task.seed,
    )?;
    let (train, test) = split_series(&series, spec.n_train)?;
    Ok(Prepared { train, test })
}

fn sgd_config(spec: &ExperimentSpec, task: &Task) -> TrainConfig {
    let mut cfg = spec.train_config;
    cfg.rng_seed = task.seed;
    if matches!(
        spec.name,
        ExperimentName::SparseSweep | ExperimentName::SmallData
    ) {
        if cfg.regularizer.kind == RegularizerKind::None {
            cfg.regularizer.kind = RegularizerKind::SigmoidRoot;
        }
        cfg.regularizer.sparsity = spec
            .sparsity
            .unwrap_or_else(|| sparsity_of(&task.truth, task.p_model));
    }
    cfg
}

fn sparsity_of(truth: &ARProcessSpec, p_model: usize) -> f64 {
    truth.active_lags().max(1) as f64 / p_model as f64
}

fn fit_with(fitter: Fitter, train: &TimeSeries, p: usize, cfg: &TrainConfig) -> Result<ARFit> {
    let data = make_lagged_dataset(train, p)?;
    match fitter {
        Fitter::LeastSquares => fit_least_squares(&data, cfg.include_intercept),
        Fitter::Sgd => fit_sgd(&data, cfg),
    }
}

fn record_for(
    spec: &ExperimentSpec,
    task: &Task,
    fitter: Fitter,
    outcome: Result<(ARFit, f64)>,
    prepared: &Prepared,
) -> (RunRecord, Vec<LagCoefficient>) {
    let mut record = RunRecord {
        experiment: spec.name,
        p_model: task.p_model,
        p_true: task.truth.order(),
        sparsity: sparsity_of(&task.truth, task.p_model),
        repeat: task.repeat,
        seed: task.seed,
        fitter,
        stpe: f64::NAN,
        test_mse: f64::NAN,
        wall_time_seconds: f64::NAN,
        error: None,
    };
    let metrics = outcome.and_then(|(fit, secs)| {
        let s = stpe(&fit.coefficients, &task.truth.coefficients)?;
        let mse = forecast_mse(&fit, &prepared.test, &prepared.train)?;
        Ok((fit, s, mse, secs))
    });
    match metrics {
        Ok((fit, s, mse, secs)) => {
            record.stpe = s;
            record.test_mse = mse;
            record.wall_time_seconds = secs;
            let lags = fit.order.max(task.truth.order());
            let coefs = (0..lags)
                .map(|i| LagCoefficient {
                    lag: i + 1,
                    true_w: task.truth.coefficients.get(i).copied().unwrap_or(0.0),
                    fitted_w: fit.coefficients.get(i).copied().unwrap_or(0.0),
                    fitter,
                    seed: task.seed,
                })
                .collect();
            (record, coefs)
        }
        Err(e) => {
            log::warn!(
                "{} p={} seed={} {fitter}: {e}",
                spec.name,
                task.p_model,
                task.seed
            );
            record.error = Some(e.to_string());
            (record, Vec::new())
        }
    }
}

fn tasks(spec: &ExperimentSpec) -> Result<Vec<Task>> {
    let mut out = Vec::with_capacity(spec.p_values.len() * spec.repeats);
    for &p in &spec.p_values {
        for repeat in 0..spec.repeats {
            let seed = record_seed(spec.seed, p, repeat);
            let truth = match spec.name {
                ExperimentName::DenseSweep | ExperimentName::Timing => match &spec.true_process {
                    Some(tp) if spec.name == ExperimentName::Timing => ARProcessSpec {
                        noise_std: spec.noise_std,
                        ..tp.clone()
                    },
                    _ => ARProcessSpec::new(
                        sample_coefficients(p, spec.abs_sum, coefficient_seed(seed))?,
                        0.0,
                        spec.noise_std,
                    )?,
                },
                ExperimentName::SparseSweep | ExperimentName::SmallData => spec.fixed_truth()?,
            };
            out.push(Task {
                p_model: p,
                repeat,
                seed,
                truth,
            });
        }
    }
    Ok(out)
}

fn sorted(mut result: SweepResult) -> SweepResult {
    result
        .records
        .sort_by_key(|r| (r.p_model, r.repeat, r.fitter));
    result
        .coefficients
        .sort_by_key(|c| (c.seed, c.fitter, c.lag));
    result
}

/// Runs the metric sweeps (dense, sparse, small-data) on a bounded pool.
fn run_metric_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let tasks = tasks(spec)?;
    let work = |task: &Task| -> Result<Vec<(RunRecord, Vec<LagCoefficient>)>> {
        let prepared = prepare(spec, task)?;
        let cfg = sgd_config(spec, task);
        Ok(spec
            .fitters
            .iter()
            .map(|&fitter| {
                let outcome = fit_with(fitter, &prepared.train, task.p_model, &cfg).map(|fit| {
                    let secs = fit.wall_time_seconds;
                    (fit, secs)
                });
                record_for(spec, task, fitter, outcome, &prepared)
            })
            .collect())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads.unwrap_or(0))
        .build()
        .map_err(|e| ArError::invalid(format!("cannot start worker pool: {e}")))?;
    let per_task: Vec<_> = pool.install(|| tasks.par_iter().map(work).collect::<Vec<_>>());

    let mut records = Vec::new();
    let mut coefficients = Vec::new();
    for batch in per_task {
        for (record, coefs) in batch? {
            records.push(record);
            coefficients.extend(coefs);
        }
    }
    Ok(sorted(SweepResult {
        spec: spec.clone(),
        records,
        coefficients,
    }))
}

fn expect_name(spec: &ExperimentSpec, name: ExperimentName) -> Result<()> {
    if spec.name != name {
        return Err(ArError::invalid(format!(
            "expected a {name} spec, got {}",
            spec.name
        )));
    }
    Ok(())
}

/// Model order equals the true order; fresh coefficients for every record.
pub fn run_dense_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    expect_name(spec, ExperimentName::DenseSweep)?;
    run_metric_sweep(spec)
}

/// Fixed process, oversized models, SGD regularized with `s = p_true / p`.
pub fn run_sparse_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    expect_name(spec, ExperimentName::SparseSweep)?;
    run_metric_sweep(spec)
}

pub fn run_small_data(spec: &ExperimentSpec) -> Result<SweepResult> {
    expect_name(spec, ExperimentName::SmallData)?;
    run_metric_sweep(spec)
}

/// Sequential single-threaded timing sweep. Each `(p, repeat, fitter)` time
/// covers lag-design construction plus the fit, not data generation; one
/// warm-up fit per `(p, fitter)` is discarded.
pub fn run_timing(spec: &ExperimentSpec) -> Result<SweepResult> {
    expect_name(spec, ExperimentName::Timing)?;
    spec.validate()?;
    let tasks = tasks(spec)?;
    let mut records = Vec::new();
    let mut coefficients = Vec::new();
    let mut warmed = std::collections::HashSet::new();
    for task in &tasks {
        let prepared = prepare(spec, task)?;
        let cfg = sgd_config(spec, task);
        for &fitter in &spec.fitters {
            if warmed.insert((task.p_model, fitter)) {
                let _ = fit_with(fitter, &prepared.train, task.p_model, &cfg);
            }
            let start = Instant::now();
            let fit = fit_with(fitter, &prepared.train, task.p_model, &cfg);
            let secs = start.elapsed().as_secs_f64();
            let (record, coefs) = record_for(spec, task, fitter, fit.map(|f| (f, secs)), &prepared);
            records.push(record);
            coefficients.extend(coefs);
        }
    }
    Ok(sorted(SweepResult {
        spec: spec.clone(),
        records,
        coefficients,
    }))
}

pub fn run(spec: &ExperimentSpec) -> Result<SweepResult> {
    match spec.name {
        ExperimentName::DenseSweep => run_dense_sweep(spec),
        ExperimentName::SparseSweep => run_sparse_sweep(spec),
        ExperimentName::SmallData => run_small_data(spec),
        ExperimentName::Timing => run_timing(spec),
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Slope of the least-squares line through `(ln p, ln median time)` for one
/// fitter's successful records.
pub fn estimate_scaling_exponent(records: &[RunRecord], fitter: Fitter) -> Result<f64> {
    let mut by_p: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.fitter == fitter && r.is_ok()) {
        if r.wall_time_seconds > 0.0 && r.wall_time_seconds.is_finite() {
            by_p.entry(r.p_model).or_default().push(r.wall_time_seconds);
        }
    }
    if by_p.len() < 3 {
        return Err(ArError::InsufficientData(format!(
            "need timings at >= 3 distinct orders for {fitter}, have {}",
            by_p.len()
        )));
    }
    let points: Vec<(f64, f64)> = by_p
        .iter()
        .map(|(&p, times)| ((p as f64).ln(), median(times).unwrap().ln()))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Median metrics per `(p_model, fitter)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub p_model: usize,
    pub fitter: Fitter,
    pub sparsity: f64,
    pub runs: usize,
    pub failed: usize,
    pub median_stpe: Option<f64>,
    pub median_test_mse: Option<f64>,
    pub median_wall_time_seconds: Option<f64>,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, Fitter), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.p_model, r.fitter)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((p_model, fitter), rs)| {
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.is_ok()).collect();
            let col =
                |f: fn(&RunRecord) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                p_model,
                fitter,
                sparsity: rs[0].sparsity,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                median_stpe: col(|r| r.stpe),
                median_test_mse: col(|r| r.test_mse),
                median_wall_time_seconds: col(|r| r.wall_time_seconds),
            }
        })
        .collect()
}

pub const RECORDS_HEADER: &str =
    "experiment,p_model,p_true,sparsity,seed,fitter,stpe,test_mse,wall_time_seconds";
pub const COEFFICIENTS_HEADER: &str = "lag,true_w,fitted_w,fitter,seed";

pub fn write_records_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.p_model,
            r.p_true,
            r.sparsity,
            r.seed,
            r.fitter,
            r.stpe,
            r.test_mse,
            r.wall_time_seconds
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_coefficients_csv(rows: &[LagCoefficient], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{COEFFICIENTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.lag, r.true_w, r.fitted_w, r.fitter, r.seed
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub records: usize,
    pub failures: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scaling_exponents: BTreeMap<String, f64>,
}

/// Paths written by [`write_bundle`].
#[derive(Debug, Clone)]
pub struct Bundle {
    pub records: PathBuf,
    pub coefficients: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `<name>.csv`, `<name>_coefficients.csv` and `<name>_manifest.json`
/// into `out_dir`.
pub fn write_bundle(result: &SweepResult, out_dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let slug = result.spec.name.slug();
    let bundle = Bundle {
        records: dir.join(format!("{slug}.csv")),
        coefficients: dir.join(format!("{slug}_coefficients.csv")),
        manifest: dir.join(format!("{slug}_manifest.json")),
    };
    write_records_csv(&result.records, &bundle.records)?;
    write_coefficients_csv(&result.coefficients, &bundle.coefficients)?;

    let mut scaling_exponents = BTreeMap::new();
    if result.spec.name == ExperimentName::Timing {
        for &fitter in &result.spec.fitters {
            if let Ok(k) = estimate_scaling_exponent(&result.records, fitter) {
                scaling_exponents.insert(fitter.label().to_string(), k);
            }
        }
    }
    let manifest = Manifest {
        spec: result.spec.clone(),
        records: result.records.len(),
        failures: result
            .records
            .iter()
            .filter(|r| !r.is_ok())
            .cloned()
            .collect(),
        summary: summarize(&result.records),
        scaling_exponents,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&bundle.manifest)?), &manifest)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: ExperimentName) -> ExperimentSpec {
        let mut spec = ExperimentSpec::preset(name);
        spec.n_train = 2000;
        spec.n_test = 500;
        spec.repeats = 2;
        spec.train_config.epochs = 5;
        spec.seed = 5;
        spec
    }

    fn rec(p: usize, secs: f64) -> RunRecord {
        RunRecord {
            experiment: ExperimentName::Timing,
            p_model: p,
            p_true: p,
            sparsity: 1.0,
            repeat: 0,
            seed: 0,
            fitter: Fitter::LeastSquares,
            stpe: 0.0,
            test_mse: 1.0,
            wall_time_seconds: secs,
            error: None,
        }
    }

    #[test]
    fn exponent_of_exact_power_laws() {
        let ps = [10usize, 20, 40, 80];
        let sq: Vec<_> = ps.iter().map(|&p| rec(p, (p * p) as f64)).collect();
        assert!((estimate_scaling_exponent(&sq, Fitter::LeastSquares).unwrap() - 2.0).abs() < 1e-9);
        let lin: Vec<_> = ps.iter().map(|&p| rec(p, 7.0 * p as f64)).collect();
        assert!(
            (estimate_scaling_exponent(&lin, Fitter::LeastSquares).unwrap() - 1.0).abs() < 1e-9
        );
        assert!(matches!(
            estimate_scaling_exponent(&sq[..2], Fitter::LeastSquares),
            Err(ArError::InsufficientData(_))
        ));
        assert!(estimate_scaling_exponent(&sq, Fitter::Sgd).is_err());
    }

    #[test]
    fn exponent_uses_the_median_per_order() {
        let mut rs = Vec::new();
        for &p in &[10usize, 20, 40] {
            let t = (p * p) as f64;
            rs.extend([rec(p, t), rec(p, t), rec(p, 1e6 * t)]);
        }
        assert!((estimate_scaling_exponent(&rs, Fitter::LeastSquares).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn record_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 1..50 {
            for r in 0..20 {
                assert!(seen.insert(record_seed(3, p, r)));
            }
        }
        assert_eq!(record_seed(3, 7, 2), record_seed(3, 7, 2));
    }

    #[test]
    fn spec_validation() {
        let mut spec = tiny(ExperimentName::DenseSweep);
        assert!(spec.validate().is_ok());
        spec.p_values = vec![3, 3];
        assert!(spec.validate().is_err());
        spec.p_values = vec![];
        assert!(spec.validate().is_err());
        let mut spec = tiny(ExperimentName::DenseSweep);
        spec.repeats = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny(ExperimentName::SparseSweep);
        spec.p_values = vec![2, 10];
        assert!(spec.validate().is_err());
        assert!(run_sparse_sweep(&tiny(ExperimentName::DenseSweep)).is_err());
    }

    #[test]
    fn dense_cardinality_and_uniqueness() {
        let mut spec = tiny(ExperimentName::DenseSweep);
        spec.p_values = vec![1, 4];
        let result = run_dense_sweep(&spec).unwrap();
        assert_eq!(result.records.len(), 2 * 2 * 2);
        let keys: std::collections::HashSet<_> = result
            .records
            .iter()
            .map(|r| (r.p_model, r.seed, r.fitter))
            .collect();
        assert_eq!(keys.len(), result.records.len());
        assert!(result
            .records
            .iter()
            .all(|r| r.is_ok() && r.sparsity == 1.0));
        assert_eq!(result.coefficients.len(), 2 * (2 + 8));
    }

    #[test]
    fn noiseless_dense_sweep_recovers_exactly() {
        let mut spec = tiny(ExperimentName::DenseSweep);
        // After burn-in a noiseless higher-order series collapses onto its
        // slowest mode, so only order one keeps a full-rank design.
        spec.p_values = vec![1];
        spec.repeats = 3;
        spec.noise_std = 0.0;
        spec.n_train = 200;
        spec.n_test = 50;
        spec.fitters = vec![Fitter::LeastSquares];
        let result = run_dense_sweep(&spec).unwrap();
        for r in &result.records {
            assert!(
                r.stpe < 1e-6,
                "p={} stpe={} {:?}",
                r.p_model,
                r.stpe,
                r.error
            );
        }
    }

    #[test]
    fn sparse_sweep_records_sparsity() {
        let mut spec = tiny(ExperimentName::SparseSweep);
        spec.p_values = vec![3, 10, 1000];
        spec.repeats = 1;
        spec.fitters = vec![Fitter::LeastSquares];
        let result = run_sparse_sweep(&spec).unwrap();
        for r in &result.records {
            assert_eq!(r.sparsity, r.p_true as f64 / r.p_model as f64);
        }
        assert_eq!(result.records.last().unwrap().sparsity, 0.003);
    }

    #[test]
    fn sweeps_are_reproducible() {
        let spec = tiny(ExperimentName::SmallData);
        let a = run_small_data(&spec).unwrap();
        let b = run_small_data(&spec).unwrap();
        let metrics = |r: &SweepResult| {
            r.records
                .iter()
                .map(|x| (x.p_model, x.seed, x.fitter, x.stpe, x.test_mse))
                .collect::<Vec<_>>()
        };
        assert_eq!(metrics(&a), metrics(&b));
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut spec = tiny(ExperimentName::DenseSweep);
        spec.p_values = vec![2];
        spec.train_config.learning_rate = 1e3;
        spec.train_config.lr_schedule = crate::arnet::LrSchedule::Constant;
        let result = run_dense_sweep(&spec).unwrap();
        let (ok, failed): (Vec<_>, Vec<_>) = result.records.iter().partition(|r| r.is_ok());
        assert!(ok.iter().all(|r| r.fitter == Fitter::LeastSquares));
        assert_eq!(failed.len(), 2);
        assert!(failed.iter().all(|r| r.stpe.is_nan()));
    }

    #[test]
    fn timing_cardinality_and_bundle() {
        let mut spec = tiny(ExperimentName::Timing);
        spec.p_values = vec![2, 4, 8];
        spec.repeats = 2;
        let result = run_timing(&spec).unwrap();
        assert_eq!(result.records.len(), 3 * 2 * 2);
        assert!(result.records.iter().all(|r| r.wall_time_seconds > 0.0));

        let dir = tempfile::tempdir().unwrap();
        let bundle = write_bundle(&result, dir.path()).unwrap();
        let text = fs::read_to_string(&bundle.records).unwrap();
        assert_eq!(text.lines().next(), Some(RECORDS_HEADER));
        assert_eq!(text.lines().count(), 1 + 12);
        let coef = fs::read_to_string(&bundle.coefficients).unwrap();
        assert_eq!(coef.lines().next(), Some(COEFFICIENTS_HEADER));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&bundle.manifest).unwrap()).unwrap();
        assert_eq!(manifest["spec"]["n_train"], 2000);
        assert!(manifest["scaling_exponents"].get("LeastSquares").is_some());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
    }
}
