//! Series data model, synthetic AR(p) generation and lag-design construction.
//!
//! Every lag-indexed vector in this crate is ordered most-recent-first:
//! element `j` pairs with `y[t - (j + 1)]`, matching coefficient `w_{j+1}`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ArError, Result};

/// Seedable generator used for every random draw in the crate.
///
/// ChaCha8 output is specified independently of platform and word size, so a
/// seed reproduces the same series everywhere.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Default fraction of unit mass given to sampled coefficient vectors.
pub const DEFAULT_ABS_SUM: f64 = 0.9;

/// Ground-truth generative AR(p) model: `y_t = c + sum_i w_i y_{t-i} + e_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ARProcessSpec {
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    pub noise_std: f64,
}

impl ARProcessSpec {
    pub fn new(coefficients: Vec<f64>, intercept: f64, noise_std: f64) -> Result<Self> {
        let spec = ARProcessSpec {
            coefficients,
            intercept,
            noise_std,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(ArError::invalid(
                "AR process needs at least one coefficient",
            ));
        }
        if self.coefficients.iter().any(|w| !w.is_finite()) || !self.intercept.is_finite() {
            return Err(ArError::invalid("AR process parameters must be finite"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ArError::invalid(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn abs_sum(&self) -> f64 {
        self.coefficients.iter().map(|w| w.abs()).sum()
    }

    /// Sufficient stability condition `sum |w_i| <= 1`.
    pub fn is_stable(&self) -> bool {
        self.abs_sum() <= 1.0 + 1e-12
    }

    /// Number of lags with a non-zero coefficient.
    pub fn active_lags(&self) -> usize {
        self.coefficients.iter().filter(|w| **w != 0.0).count()
    }
}

/// Ordered observations plus optional generation provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub source_spec: Option<ARProcessSpec>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ArError::invalid(
                "time series must contain at least one value",
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ArError::invalid(format!("non-finite value at index {i}")));
        }
        Ok(TimeSeries {
            values,
            seed: None,
            source_spec: None,
            burn_in: None,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn derived(&self, values: Vec<f64>) -> Self {
        TimeSeries {
            values,
            seed: self.seed,
            source_spec: self.source_spec.clone(),
            burn_in: self.burn_in,
            warnings: self.warnings.clone(),
        }
    }

    pub fn provenance(&self) -> SeriesProvenance {
        SeriesProvenance {
            n: self.len(),
            seed: self.seed,
            burn_in: self.burn_in,
            spec: self.source_spec.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Writes a single-column CSV with header `value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "value")?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a CSV with a `value` column (other columns are ignored).
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let col = headers
            .iter()
            .position(|h| h.trim() == "value")
            .ok_or_else(|| {
                ArError::invalid(format!(
                    "{}: missing `value` column",
                    path.as_ref().display()
                ))
            })?;
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let field = record.get(col).unwrap_or("").trim();
            let v: f64 = field.parse().map_err(|_| {
                ArError::invalid(format!(
                    "row {}: cannot parse `{field}` as a number",
                    line + 1
                ))
            })?;
            values.push(v);
        }
        TimeSeries::new(values)
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, &self.provenance())?;
        Ok(())
    }
}

/// JSON sidecar stored next to a generated series CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesProvenance {
    pub n: usize,
    pub seed: Option<u64>,
    pub burn_in: Option<usize>,
    pub spec: Option<ARProcessSpec>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Mean and population standard deviation used to standardize a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(ArError::invalid(
                "cannot compute statistics of an empty series",
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > f64::EPSILON * mean.abs().max(1.0)) {
            return Err(ArError::DegenerateInput(format!(
                "series has zero variance (mean {mean})"
            )));
        }
        Ok(NormalizationStats { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn invert_series(&self, series: &TimeSeries) -> TimeSeries {
        series.derived(series.values.iter().map(|&z| self.invert(z)).collect())
    }
}

/// (lag window, target) pairs for fitting an order-`p` model.
///
/// Row `i` holds `(y[p+i-1], ..., y[i])` and its target is `y[p+i]`. Rows are
/// served as slices into a reversed copy of the series, so the design matrix
/// costs `O(n)` memory regardless of `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDataset {
    reversed: Vec<f64>,
    targets: Vec<f64>,
    order: usize,
}

impl LaggedDataset {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Lag window of row `i`, most recent first.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.reversed.len() - self.order - i;
        &self.reversed[start..start + self.order]
    }

    /// Column `j` (lag `j + 1`) over rows `0..n_rows`, in reverse row order.
    ///
    /// Every column is a contiguous slice of the reversed series; the slice
    /// element `k` belongs to row `n_rows - 1 - k`.
    #[inline]
    pub(crate) fn column_rev(&self, j: usize) -> &[f64] {
        &self.reversed[j + 1..j + 1 + self.n_rows()]
    }

    /// Targets in reverse row order, aligned with [`Self::column_rev`].
    #[inline]
    pub(crate) fn targets_rev(&self) -> &[f64] {
        &self.reversed[..self.n_rows()]
    }

    /// Materialized `n_rows x p` design, row-major.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Same dataset with every value mapped through `f`.
    pub(crate) fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        LaggedDataset {
            reversed: self.reversed.iter().map(|&v| f(v)).collect(),
            targets: self.targets.iter().map(|&v| f(v)).collect(),
            order: self.order,
        }
    }

    /// Mean and population std over every series value the dataset touches.
    pub(crate) fn value_stats(&self) -> Result<NormalizationStats> {
        NormalizationStats::of(&self.reversed)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.reversed.iter().all(|v| v.is_finite())
    }
}

/// Draws `p` coefficients from `Uniform(-1, 1)` and rescales them so that
/// `sum |w_i| == target_abs_sum`.
pub fn sample_coefficients(p: usize, target_abs_sum: f64, rng_seed: u64) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(ArError::invalid("order p must be >= 1"));
    }
    if !(target_abs_sum > 0.0 && target_abs_sum <= 1.0) {
        return Err(ArError::invalid(format!(
            "target_abs_sum must lie in (0, 1], got {target_abs_sum}"
        )));
    }
    let mut rng = seeded_rng(rng_seed);
    let mut w: Vec<f64> = loop {
        let draw: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        if draw.iter().any(|v: &f64| v.abs() > 1e-6) {
            break draw;
        }
    };
    let sum: f64 = w.iter().map(|v| v.abs()).sum();
    let scale = target_abs_sum / sum;
    w.iter_mut().for_each(|v| *v *= scale);
    Ok(w)
}

/// Burn-in used when the caller does not choose one: `max(10 p, 100)`.
pub fn default_burn_in(p: usize) -> usize {
    (10 * p).max(100)
}

/// Simulates `n` observations of `spec` after discarding `burn_in` samples.
///
/// The `p` values preceding the first generated sample are drawn i.i.d. from
/// `Normal(0, max(noise_std, 1))`.
pub fn generate_ar_series(
    spec: &ARProcessSpec,
    n: usize,
    burn_in: usize,
    rng_seed: u64,
) -> Result<TimeSeries> {
    spec.validate()?;
    let mut rng = seeded_rng(rng_seed);
    let init =
        Normal::new(0.0, spec.noise_std.max(1.0)).map_err(|e| ArError::invalid(e.to_string()))?;
    let pre_history: Vec<f64> = (0..spec.order()).map(|_| init.sample(&mut rng)).collect();
    simulate(spec, n, burn_in, &pre_history, rng, rng_seed)
}

/// Like [`generate_ar_series`] but with an explicit pre-history
/// (oldest first, length `p`).
pub fn generate_ar_series_from(
    spec: &ARProcessSpec,
    n: usize,
    burn_in: usize,
    pre_history: &[f64],
    rng_seed: u64,
) -> Result<TimeSeries> {
    spec.validate()?;
    if pre_history.len() != spec.order() {
        return Err(ArError::invalid(format!(
            "pre-history has {} values, process order is {}",
            pre_history.len(),
            spec.order()
        )));
    }
    simulate(
        spec,
        n,
        burn_in,
        pre_history,
        seeded_rng(rng_seed),
        rng_seed,
    )
}

fn simulate(
    spec: &ARProcessSpec,
    n: usize,
    burn_in: usize,
    pre_history: &[f64],
    mut rng: SeededRng,
    rng_seed: u64,
) -> Result<TimeSeries> {
    if n == 0 {
        return Err(ArError::invalid("series length n must be >= 1"));
    }
    let p = spec.order();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| ArError::invalid(e.to_string()))?;

    let total = p + burn_in + n;
    let mut y = Vec::with_capacity(total);
    y.extend_from_slice(pre_history);
    for t in p..total {
        let mut next = spec.intercept;
        for (i, w) in spec.coefficients.iter().enumerate() {
            next += w * y[t - 1 - i];
        }
        if spec.noise_std > 0.0 {
            next += noise.sample(&mut rng);
        }
        y.push(next);
    }

    let values = y.split_off(p + burn_in);
    let mut warnings = Vec::new();
    if !spec.is_stable() {
        let msg = format!(
            "process is not guaranteed stable: sum |w_i| = {:.6} > 1",
            spec.abs_sum()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ArError::DegenerateInput(format!(
            "generated series overflowed at index {i}; the process is explosive"
        )));
    }
    Ok(TimeSeries {
        values,
        seed: Some(rng_seed),
        source_spec: Some(spec.clone()),
        burn_in: Some(burn_in),
        warnings,
    })
}

/// Splits into the first `n_train` values and the remainder, preserving order.
pub fn split_series(series: &TimeSeries, n_train: usize) -> Result<(TimeSeries, TimeSeries)> {
    if n_train == 0 || n_train >= series.len() {
        return Err(ArError::invalid(format!(
            "n_train must satisfy 0 < n_train < {}, got {n_train}",
            series.len()
        )));
    }
    let (head, tail) = series.values.split_at(n_train);
    Ok((series.derived(head.to_vec()), series.derived(tail.to_vec())))
}

/// Rescales to zero mean and unit population standard deviation.
pub fn standardize(series: &TimeSeries) -> Result<(TimeSeries, NormalizationStats)> {
    let stats = NormalizationStats::of(&series.values)?;
    let values = series.values.iter().map(|&v| stats.apply(v)).collect();
    Ok((series.derived(values), stats))
}

/// Unrolls a series into `len - p` lag windows and their targets.
pub fn make_lagged_dataset(series: &TimeSeries, p: usize) -> Result<LaggedDataset> {
    if p == 0 {
        return Err(ArError::invalid("order p must be >= 1"));
    }
    if series.len() <= p {
        return Err(ArError::invalid(format!(
            "series of length {} is too short for order {p}",
            series.len()
        )));
    }
    let reversed: Vec<f64> = series.values.iter().rev().copied().collect();
    let targets = series.values[p..].to_vec();
    Ok(LaggedDataset {
        reversed,
        targets,
        order: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::new(values.to_vec()).unwrap()
    }

    #[test]
    fn sampled_coefficients_hit_target_mass() {
        let w = sample_coefficients(3, 0.9, 7).unwrap();
        assert_eq!(w.len(), 3);
        let s: f64 = w.iter().map(|v| v.abs()).sum();
        assert!((s - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_coefficient_scales_to_unit() {
        let w = sample_coefficients(1, 1.0, 3).unwrap();
        assert!((w[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(
            sample_coefficients(10, 0.9, 42).unwrap(),
            sample_coefficients(10, 0.9, 42).unwrap()
        );
        assert_ne!(
            sample_coefficients(10, 0.9, 42).unwrap(),
            sample_coefficients(10, 0.9, 43).unwrap()
        );
    }

    #[test]
    fn sampling_rejects_bad_arguments() {
        assert!(sample_coefficients(0, 0.9, 1).is_err());
        assert!(sample_coefficients(3, 0.0, 1).is_err());
        assert!(sample_coefficients(3, 1.5, 1).is_err());
    }

    #[test]
    fn noiseless_recursion_from_forced_history() {
        let spec = ARProcessSpec::new(vec![0.5], 0.0, 0.0).unwrap();
        let s = generate_ar_series_from(&spec, 3, 0, &[1.0], 0).unwrap();
        assert_eq!(s.values, vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn white_noise_variance() {
        let spec = ARProcessSpec::new(vec![0.0], 0.0, 1.0).unwrap();
        let s = generate_ar_series(&spec, 10_000, 100, 11).unwrap();
        let stats = NormalizationStats::of(&s.values).unwrap();
        let var = stats.std * stats.std;
        assert!((0.94..=1.06).contains(&var), "variance {var}");
    }

    #[test]
    fn sparse_ar3_generates_requested_length() {
        let spec = ARProcessSpec::new(vec![0.2, 0.3, -0.5], 0.0, 1.0).unwrap();
        let s = generate_ar_series(&spec, 125_000, default_burn_in(3), 1).unwrap();
        assert_eq!(s.len(), 125_000);
        assert!(s.warnings.is_empty());
        let (train, test) = split_series(&s, 100_000).unwrap();
        assert_eq!((train.len(), test.len()), (100_000, 25_000));
    }

    #[test]
    fn unstable_spec_warns_but_generates() {
        let spec = ARProcessSpec::new(vec![0.7, 0.6], 0.0, 1.0).unwrap();
        let s = generate_ar_series(&spec, 20, 0, 5).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn generation_is_bit_identical_for_a_seed() {
        let spec = ARProcessSpec::new(vec![0.2, 0.3, -0.5], 0.1, 1.0).unwrap();
        let a = generate_ar_series(&spec, 500, 30, 9).unwrap();
        let b = generate_ar_series(&spec, 500, 30, 9).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn split_boundaries() {
        let s = series(&[1.0, 2.0]);
        let (a, b) = split_series(&s, 1).unwrap();
        assert_eq!((a.values, b.values), (vec![1.0], vec![2.0]));
        let s = series(&vec![0.5; 2000]);
        let (a, b) = split_series(&s, 1000).unwrap();
        assert_eq!((a.len(), b.len()), (1000, 1000));
        assert!(split_series(&s, 2000).is_err());
        assert!(split_series(&s, 0).is_err());
    }

    #[test]
    fn standardize_hand_example() {
        let (z, stats) = standardize(&series(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert!((stats.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let k = 1.0 / (2.0f64 / 3.0).sqrt();
        for (got, want) in z.values.iter().zip([-k, 0.0, k]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let (z, _) = standardize(&series(&[3.0, -1.0, 4.0, 1.0, 5.0])).unwrap();
        let (zz, _) = standardize(&z).unwrap();
        for (a, b) in z.values.iter().zip(&zz.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_rejects_constant_series() {
        assert!(matches!(
            standardize(&series(&[5.0, 5.0, 5.0])),
            Err(ArError::DegenerateInput(_))
        ));
    }

    #[test]
    fn lagged_dataset_unrolls_most_recent_first() {
        let d = make_lagged_dataset(&series(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(d.inputs(), vec![vec![2.0, 1.0], vec![3.0, 2.0]]);
        assert_eq!(d.targets(), &[3.0, 4.0]);
    }

    #[test]
    fn lagged_dataset_boundaries() {
        let d = make_lagged_dataset(&series(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(d.n_rows(), 1);
        assert!(make_lagged_dataset(&series(&[1.0, 2.0]), 2).is_err());
        let long = series(&vec![0.0; 100_000]);
        assert_eq!(make_lagged_dataset(&long, 1000).unwrap().n_rows(), 99_000);
    }

    #[test]
    fn reversed_columns_align_with_rows() {
        let values: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let d = make_lagged_dataset(&series(&values), 3).unwrap();
        let n = d.n_rows();
        for j in 0..3 {
            for (k, v) in d.column_rev(j).iter().enumerate() {
                assert_eq!(*v, d.row(n - 1 - k)[j]);
            }
        }
        for k in 0..n {
            assert_eq!(d.targets_rev()[k], d.targets()[n - 1 - k]);
        }
    }

    #[test]
    fn noiseless_rows_satisfy_the_recursion() {
        let spec = ARProcessSpec::new(vec![0.4, -0.2, 0.1], 0.3, 0.0).unwrap();
        let s = generate_ar_series(&spec, 200, 50, 2).unwrap();
        let d = make_lagged_dataset(&s, 3).unwrap();
        for i in 0..d.n_rows() {
            let pred: f64 = spec.intercept
                + d.row(i)
                    .iter()
                    .zip(&spec.coefficients)
                    .map(|(x, w)| x * w)
                    .sum::<f64>();
            let y = d.targets()[i];
            assert!(
                (pred - y).abs() <= 1e-12 * y.abs().max(1.0),
                "{pred} vs {y}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = series(&[0.1, -2.5, 1e-17, 3.0e8]);
        s.write_csv(&path).unwrap();
        assert_eq!(TimeSeries::read_csv(&path).unwrap().values, s.values);
    }

    proptest! {
        #[test]
        fn sampled_mass_is_exact(p in 1usize..200, target in 0.01f64..=1.0, seed in any::<u64>()) {
            let w = sample_coefficients(p, target, seed).unwrap();
            let s: f64 = w.iter().map(|v| v.abs()).sum();
            prop_assert!((s - target).abs() < 1e-12);
        }

        #[test]
        fn standardize_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 2..64)) {
            let s = series(&values);
            prop_assume!(NormalizationStats::of(&values).is_ok());
            let (z, stats) = standardize(&s).unwrap();
            let back = stats.invert_series(&z);
            for (a, b) in values.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn lag_rows_index_the_series(len in 2usize..60, p_raw in 1usize..60) {
            let p = 1 + p_raw % (len - 1);
            let values: Vec<f64> = (0..len).map(|v| v as f64 * 1.5 - 3.0).collect();
            let d = make_lagged_dataset(&series(&values), p).unwrap();
            prop_assert_eq!(d.n_rows(), len - p);
            for i in 0..d.n_rows() {
                for j in 0..p {
                    prop_assert_eq!(d.row(i)[j], values[p + i - 1 - j]);
                }
                prop_assert_eq!(d.targets()[i], values[p + i]);
            }
        }
    }
}
