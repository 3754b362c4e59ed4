//! Metrics, the persistence baseline, run reports and the ablation harness.
//!
//! Reported errors are in physical units (m/s and (m/s)²): forecasts and
//! targets are inverse-scaled before any metric is taken.

use std::collections::BTreeSet;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{split_season, Direction, ScalerParams, SeasonSplit, WindSeries, TIMESTAMP_FORMAT};
use crate::encoder::Variant;
use crate::error::{EvalError, Result};
use crate::model::{Tcnformer, TcnformerSpec};
use crate::tensor::Array;
use crate::training::{train_model, EpochLog, TrainConfig, TrainOutcome, TrainingLog};

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<(), EvalError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(EvalError::Contract(format!(
            "metric needs equal non-empty lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Symmetric percent difference `200·(b − m)/(b + m)`; positive when the
/// model error `m` is below the baseline error `b`.
pub fn relative_improvement(baseline: f64, model: f64) -> Result<f64, EvalError> {
    let denom = baseline + model;
    if denom == 0.0 {
        return Err(EvalError::UndefinedImprovement);
    }
    Ok(200.0 * (baseline - model) / denom)
}

/// Repeats the last observed value `horizon` times.
pub fn persistence_baseline(input: &[f64], horizon: usize) -> Result<Vec<f64>, EvalError> {
    let last = *input
        .last()
        .ok_or_else(|| EvalError::Contract("persistence needs a non-empty input".into()))?;
    Ok(vec![last; horizon])
}

/// SHA-256 over `key=value` lines, skipping the model variant so the arms of
/// one ablation share a fingerprint.
pub fn config_fingerprint(kv: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in kv.iter().filter(|(k, _)| k != "variant") {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of evaluating one trained model on a season's test window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub season: String,
    pub variant: String,
    pub units: String,
    pub mae: f64,
    pub mse: f64,
    pub persistence_mae: f64,
    pub persistence_mse: f64,
    pub improvement_vs_baseline_pct: f64,
    pub per_step_abs_error: Vec<f64>,
    pub forecast_start: String,
    pub forecast: Vec<f64>,
    pub truth: Vec<f64>,
    pub config_fingerprint: String,
}

impl RunReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are all TOML-representable")
    }

    pub fn from_toml(s: &str) -> std::result::Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }
}

/// Forecasts the last `H` hours of `series` from the `T` hours before them
/// and scores the forecast in physical units.
pub fn evaluate_series(
    model: &Tcnformer,
    scaler: &ScalerParams,
    series: &WindSeries,
    season: &str,
    fingerprint: &str,
) -> Result<RunReport> {
    let (t, h) = (model.spec().lookback, model.spec().horizon);
    let window = series.tail(t + h)?;
    let (history, truth) = window.speeds().split_at(t);
    let scaled = scaler.apply(history, Direction::Forward);
    let pred = model.predict(&Array::new(vec![1, t], scaled)?)?;
    let forecast = scaler.apply(pred.row(0), Direction::Inverse);
    let naive = persistence_baseline(history, h)?;
    let m = mae(truth, &forecast)?;
    let p = mae(truth, &naive)?;
    Ok(RunReport {
        season: season.to_string(),
        variant: model.spec().encoder.variant.name().to_string(),
        units: "m/s".into(),
        mae: m,
        mse: mse(truth, &forecast)?,
        persistence_mae: p,
        persistence_mse: mse(truth, &naive)?,
        improvement_vs_baseline_pct: relative_improvement(p, m).unwrap_or(0.0),
        per_step_abs_error: truth.iter().zip(&forecast).map(|(a, b)| (a - b).abs()).collect(),
        forecast_start: window.timestamps()[t].format(TIMESTAMP_FORMAT).to_string(),
        forecast,
        truth: truth.to_vec(),
        config_fingerprint: fingerprint.to_string(),
    })
}

/// A trained model with its data split.
pub struct Fitted {
    pub model: Tcnformer,
    pub split: SeasonSplit,
    pub outcome: TrainOutcome,
}

/// Splits the series, initializes the model from `cfg.seed` and trains it.
pub fn fit(
    series: &WindSeries,
    spec: TcnformerSpec,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Fitted> {
    let split = split_season(series, spec.lookback, spec.horizon)?;
    let model = Tcnformer::new(spec, cfg.seed)?;
    let outcome = train_model(&model, &split.train, &split.val, cfg, on_epoch)?;
    Ok(Fitted { model, split, outcome })
}

/// Checks that swapping in `variant` changed only the intended attention
/// sub-layer. `base` and `other` are parameter name/shape lists.
pub fn audit_substitution(
    base: &[(String, Vec<usize>)],
    other: &[(String, Vec<usize>)],
    variant: Variant,
) -> std::result::Result<Vec<String>, String> {
    let allowed: &[&str] = match variant {
        Variant::Full => &[],
        Variant::MsaForCtMsa => &[".sub1.ct_msa.", ".sub1.msa."],
        Variant::MsaForTea => &[".sub2.tea.", ".sub2.msa."],
    };
    let a: BTreeSet<_> = base.iter().collect();
    let b: BTreeSet<_> = other.iter().collect();
    let changed: Vec<String> = a
        .symmetric_difference(&b)
        .map(|(name, _)| name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(bad) = changed.iter().find(|n| !allowed.iter().any(|p| n.contains(p))) {
        return Err(format!("{} touched `{bad}` outside its sub-layer", variant.name()));
    }
    if variant != Variant::Full && changed.is_empty() {
        return Err(format!("{} changed nothing", variant.name()));
    }
    Ok(changed)
}

fn names_and_shapes(spec: &TcnformerSpec) -> Result<Vec<(String, Vec<usize>)>> {
    Ok(Tcnformer::new(spec.clone(), 0)?
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect())
}

pub struct ArmResult {
    pub variant: Variant,
    pub outcome: Result<(RunReport, TrainingLog)>,
    /// Parameter names that differ from the full model.
    pub audit: std::result::Result<Vec<String>, String>,
}

/// Trains and evaluates the three arms (full model, standard MSA in place of
/// the causal windowed attention, standard MSA in place of the external
/// attention) under one seed and config. Arms run on separate threads; an
/// arm's failure is reported without affecting the others.
pub fn run_ablation(
    series: &WindSeries,
    season: &str,
    base: &TcnformerSpec,
    cfg: &TrainConfig,
    fingerprint: &str,
) -> Result<Vec<ArmResult>> {
    let mut full = base.clone();
    full.encoder.variant = Variant::Full;
    let full_names = names_and_shapes(&full)?;
    let specs: Vec<(Variant, TcnformerSpec)> = Variant::ALL
        .into_iter()
        .map(|v| {
            let mut s = base.clone();
            s.encoder.variant = v;
            (v, s)
        })
        .collect();
    let results = thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|(v, spec)| {
                let spec = spec.clone();
                let v = *v;
                scope.spawn(move || -> Result<(RunReport, TrainingLog)> {
                    let fitted = fit(series, spec, cfg, |_| {})?;
                    let report = evaluate_series(&fitted.model, &fitted.split.scaler, series, season, fingerprint)?;
                    debug_assert_eq!(report.variant, v.name());
                    Ok((report, fitted.outcome.log))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation arm panicked"))
            .collect::<Vec<_>>()
    });
    specs
        .into_iter()
        .zip(results)
        .map(|((variant, spec), outcome)| {
            Ok(ArmResult {
                variant,
                outcome,
                audit: audit_substitution(&full_names, &names_and_shapes(&spec)?, variant),
            })
        })
        .collect()
}

pub const COMPARISON_HEADER: [&str; 5] = ["variant", "season", "mae", "mse", "improvement_vs_baseline_pct"];

/// Comparison table: one row per report plus the persistence baseline.
pub fn write_comparison_csv(path: &Path, reports: &[RunReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::error::DataError::from)?;
    let mut put = |rec: [String; 5]| w.write_record(&rec).map_err(crate::error::DataError::from);
    put(COMPARISON_HEADER.map(String::from))?;
    if let Some(r) = reports.first() {
        put([
            "persistence".into(),
            r.season.clone(),
            r.persistence_mae.to_string(),
            r.persistence_mse.to_string(),
            "0".into(),
        ])?;
    }
    for r in reports {
        put([
            r.variant.clone(),
            r.season.clone(),
            r.mae.to_string(),
            r.mse.to_string(),
            r.improvement_vs_baseline_pct.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step absolute error curves, long format: `variant,season,step,mae`.
pub fn write_per_step_csv(path: &Path, reports: &[RunReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::error::DataError::from)?;
    w.write_record(["variant", "season", "step", "mae"])
        .map_err(crate::error::DataError::from)?;
    for r in reports {
        for (i, e) in r.per_step_abs_error.iter().enumerate() {
            w.write_record([r.variant.clone(), r.season.clone(), (i + 1).to_string(), e.to_string()])
                .map_err(crate::error::DataError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Forecast against truth for one report: `step,forecast,truth`.
pub fn write_forecast_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::error::DataError::from)?;
    w.write_record(["step", "forecast", "truth"])
        .map_err(crate::error::DataError::from)?;
    for (i, (f, t)) in report.forecast.iter().zip(&report.truth).enumerate() {
        w.write_record([(i + 1).to_string(), f.to_string(), t.to_string()])
            .map_err(crate::error::DataError::from)?;
    }
    w.flush()?;
    Ok(())
}
