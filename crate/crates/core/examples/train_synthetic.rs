//! Trains the default forecaster on a synthetic daily cycle and compares its
//! held-out 12-hour forecast with persistence.
//!
//! `cargo run --release --example train_synthetic -- 20`

use tcnformer::data::{synthetic_sine, utc_hour};
use tcnformer::eval::{evaluate_series, fit};
use tcnformer::model::TcnformerSpec;
use tcnformer::training::TrainConfig;

fn main() -> tcnformer::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|e| e.parse().ok()).unwrap_or(20);
    let series = synthetic_sine(600, 24.0, 1.0, 0.05, 7, utc_hour(2021, 6, 1, 0).unwrap());
    let cfg = TrainConfig { epochs, seed: 7, ..TrainConfig::default() };
    let spec = TcnformerSpec::default();
    println!("epoch  train_mse  val_mse   seconds");
    let fitted = fit(&series, spec, &cfg, |e| {
        println!("{:>5}  {:.6}  {:.6}  {:.2}", e.epoch, e.train_mse, e.val_mse, e.seconds)
    })?;
    println!(
        "{} parameters; best epoch {}",
        fitted.model.parameter_count(),
        fitted.outcome.best_epoch
    );
    let report = evaluate_series(&fitted.model, &fitted.split.scaler, &series, "full", "")?;
    println!("step  truth  forecast  persistence");
    let last = series.speeds()[series.len() - 13];
    for (i, (t, f)) in report.truth.iter().zip(&report.forecast).enumerate() {
        println!("{:>4}  {t:.3}  {f:.3}     {last:.3}", i + 1);
    }
    println!(
        "MAE {:.4} m/s vs persistence {:.4} m/s ({:+.1}% symmetric improvement)",
        report.mae, report.persistence_mae, report.improvement_vs_baseline_pct
    );
    Ok(())
}
