use std::fs;
use std::io::Write;
use std::path::Path;

use arnet_core::experiments::{self, ExperimentSpec, SweepResult};
use arnet_core::metrics::write_residuals_csv;
use arnet_core::timeseries::default_burn_in;
use arnet_core::{
    evaluate as evaluate_fit, fit_least_squares, fit_sgd, generate_ar_series, make_lagged_dataset,
    sample_coefficients, split_series, stpe, ARFit, ARProcessSpec, Fitter, RegularizerKind,
    TimeSeries, TrainConfig,
};
use serde::Deserialize;
use serde_json::Value;

use crate::{CliError, EvaluateArgs, ExperimentArgs, FitArgs, GenerateArgs, TrainFlags};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        log::info!("no seed given, using --seed {seed}");
        seed
    })
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
struct GenerateConfig {
    coefficients: Option<Vec<f64>>,
    order: Option<usize>,
    abs_sum: Option<f64>,
    intercept: Option<f64>,
    noise_std: Option<f64>,
    n: Option<usize>,
    seed: Option<u64>,
    burn_in: Option<usize>,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let file: GenerateConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => GenerateConfig::default(),
    };
    let coefficients = args.coefficients.or(file.coefficients);
    let order = args.order.or(file.order);
    let n = args
        .n
        .or(file.n)
        .ok_or_else(|| usage("--n (number of samples) is required"))?;
    let seed = seed_or_random(args.seed.or(file.seed));

    let coefficients = match (coefficients, order) {
        (Some(w), Some(p)) if w.len() != p => {
            return Err(usage(format!(
                "--order {p} contradicts {} given coefficients",
                w.len()
            )))
        }
        (Some(w), _) => w,
        (None, Some(p)) => {
            let abs_sum = args.abs_sum.or(file.abs_sum).unwrap_or(0.9);
            // Keep the coefficient stream apart from the noise stream.
            sample_coefficients(p, abs_sum, seed ^ 0x5EED_C0EF)?
        }
        (None, None) => return Err(usage("give --coefficients or --order")),
    };
    let spec = ARProcessSpec::new(
        coefficients,
        args.intercept.or(file.intercept).unwrap_or(0.0),
        args.noise_std.or(file.noise_std).unwrap_or(1.0),
    )?;
    let burn_in = args
        .burn_in
        .or(file.burn_in)
        .unwrap_or_else(|| default_burn_in(spec.order()));
    let series = generate_ar_series(&spec, n, burn_in, seed)?;
    for w in &series.warnings {
        log::warn!("{w}");
    }
    series.write_csv(&args.out)?;
    let sidecar = args
        .sidecar
        .unwrap_or_else(|| args.out.with_extension("json"));
    series.write_sidecar(&sidecar)?;
    log::info!(
        "wrote {} values to {} (provenance {})",
        series.len(),
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
            Ok(())
        };
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("learning_rate", self.learning_rate.map(|v| v.to_string()))?;
        set("momentum", self.momentum.map(|v| v.to_string()))?;
        set("lr_schedule", self.lr_schedule.clone())?;
        set("regularizer", self.regularizer.clone())?;
        set("c_lambda", self.c_lambda.clone())?;
        set("c1", self.c1.map(|v| v.to_string()))?;
        set("c2", self.c2.map(|v| v.to_string()))?;
        if self.no_standardize {
            cfg.standardize = false;
        }
        Ok(())
    }
}

fn read_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::parse(&fs::read_to_string(p)?)?),
        None => Ok(TrainConfig::default()),
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let mut series = TimeSeries::read_csv(&args.input)?;
    if let Some(n) = args.split {
        series = split_series(&series, n)?.0;
    }
    if series.len() < args.order + 2 {
        return Err(usage(format!(
            "series has {} values; order {} needs at least {}",
            series.len(),
            args.order,
            args.order + 2
        )));
    }
    let data = make_lagged_dataset(&series, args.order)?;

    let fit: ARFit = match args.fitter {
        Fitter::LeastSquares => fit_least_squares(&data, !args.no_intercept)?,
        Fitter::Sgd => {
            let mut cfg = read_train_config(args.config.as_deref())?;
            args.train.apply(&mut cfg)?;
            if let Some(s) = args.sparsity {
                cfg.regularizer.sparsity = s;
                if args.train.regularizer.is_none() && cfg.regularizer.kind == RegularizerKind::None
                {
                    cfg.regularizer.kind = RegularizerKind::SigmoidRoot;
                }
            }
            if args.no_intercept {
                cfg.include_intercept = false;
            }
            cfg.rng_seed = match (args.seed, &args.config) {
                (Some(s), _) => s,
                (None, Some(_)) => cfg.rng_seed,
                (None, None) => seed_or_random(None),
            };
            cfg.batch_size = cfg.batch_size.min(data.n_rows());
            fit_sgd(&data, &cfg)?
        }
    };

    write_json(&fit, args.out.as_deref())?;
    if let Some(truth) = &args.true_coefficients {
        let value = stpe(&fit.coefficients, truth)?;
        if args.out.is_some() {
            println!("stpe {value}");
        } else {
            eprintln!("stpe {value}");
        }
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let fit: ARFit = serde_json::from_str(&fs::read_to_string(&args.fit)?)?;
    fit.validate()?;
    let (context, test) = match (&args.test, &args.context, &args.input, args.split) {
        (Some(test), Some(context), None, None) => {
            (TimeSeries::read_csv(context)?, TimeSeries::read_csv(test)?)
        }
        (None, None, Some(input), Some(n)) => split_series(&TimeSeries::read_csv(input)?, n)?,
        _ => {
            return Err(usage(
                "give either --test with --context, or --input with --split",
            ))
        }
    };
    let (report, rows) = evaluate_fit(
        &fit,
        &test,
        &context,
        args.true_coefficients.as_deref(),
        args.threshold,
    )?;
    if let Some(path) = &args.residuals {
        write_residuals_csv(&rows, path)?;
    }
    write_json(&report, args.out.as_deref())
}

/// Overlays the keys of `patch` onto `base`, recursing into objects.
/// Keys absent from `base` are rejected.
fn overlay(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v, &here)?,
                    Some(slot) => *slot = v,
                    None => return Err(usage(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn experiment_spec(args: &ExperimentArgs) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::preset(args.name);
    let mut config_seed = None;
    if let Some(path) = &args.config {
        let patch: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        if !patch.is_object() {
            return Err(usage("experiment config must be a JSON object"));
        }
        config_seed = patch.get("seed").and_then(Value::as_u64);
        let mut value = serde_json::to_value(&spec)?;
        overlay(&mut value, patch, "")?;
        spec = serde_json::from_value(value)?;
        spec.name = args.name;
    }
    if let Some(p) = &args.p_values {
        spec.p_values = p.clone();
    }
    if let Some(n) = args.n_train {
        spec.n_train = n;
    }
    if let Some(n) = args.n_test {
        spec.n_test = n;
    }
    if let Some(r) = args.repeats {
        spec.repeats = r;
    }
    if let Some(s) = args.noise_std {
        spec.noise_std = s;
    }
    if let Some(f) = &args.fitters {
        spec.fitters = f.clone();
    }
    if let Some(w) = &args.true_coefficients {
        spec.true_process = Some(ARProcessSpec::new(w.clone(), 0.0, spec.noise_std)?);
    }
    if args.sparsity.is_some() {
        spec.sparsity = args.sparsity;
    }
    if args.threads.is_some() {
        spec.threads = args.threads;
    }
    args.train.apply(&mut spec.train_config)?;
    spec.seed = seed_or_random(args.seed.or(config_seed));
    spec.validate()?;
    Ok(spec)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn print_summary(result: &SweepResult) {
    println!(
        "{:>6} {:>13} {:>9} {:>12} {:>12} {:>12} {:>7}",
        "p", "fitter", "sparsity", "median_stpe", "median_mse", "median_secs", "failed"
    );
    for row in experiments::summarize(&result.records) {
        println!(
            "{:>6} {:>13} {:>9.4} {:>12} {:>12} {:>12} {:>7}",
            row.p_model,
            row.fitter.label(),
            row.sparsity,
            fmt_opt(row.median_stpe, 3),
            fmt_opt(row.median_test_mse, 4),
            fmt_opt(row.median_wall_time_seconds, 5),
            row.failed
        );
    }
}

pub fn experiment(args: ExperimentArgs) -> Result<()> {
    let spec = experiment_spec(&args)?;
    log::info!(
        "running {} over p = {:?}, {} repeats, seed {}",
        spec.name,
        spec.p_values,
        spec.repeats,
        spec.seed
    );
    let result = experiments::run(&spec)?;
    let bundle = experiments::write_bundle(&result, &args.out_dir)?;
    print_summary(&result);
    if spec.name == experiments::ExperimentName::Timing {
        for &fitter in &spec.fitters {
            match experiments::estimate_scaling_exponent(&result.records, fitter) {
                Ok(k) => println!("scaling exponent {}: {k:.3}", fitter.label()),
                Err(e) => log::warn!("{e}"),
            }
        }
    }
    log::info!(
        "wrote {}, {} and {}",
        bundle.records.display(),
        bundle.coefficients.display(),
        bundle.manifest.display()
    );
    Ok(())
}
