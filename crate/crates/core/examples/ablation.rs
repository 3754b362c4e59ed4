//! Three-arm ablation on a synthetic series: the full encoder, standard
//! self-attention in place of the causal windowed attention, and standard
//! self-attention in place of the external-memory attention.
//!
//! `cargo run --release --example ablation -- 5`

use tcnformer::data::{synthetic_sine, utc_hour};
use tcnformer::eval::run_ablation;
use tcnformer::model::TcnformerSpec;
use tcnformer::training::TrainConfig;

fn main() -> tcnformer::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|e| e.parse().ok()).unwrap_or(5);
    let series = synthetic_sine(600, 24.0, 1.0, 0.05, 7, utc_hour(2021, 6, 1, 0).unwrap());
    let cfg = TrainConfig { epochs, seed: 7, ..TrainConfig::default() };
    let arms = run_ablation(&series, "full", &TcnformerSpec::default(), &cfg, "example")?;
    for arm in arms {
        let name = arm.variant.name();
        match (&arm.outcome, &arm.audit) {
            (Ok((report, _)), Ok(changed)) => {
                let curve: Vec<String> = report.per_step_abs_error.iter().map(|e| format!("{e:.2}")).collect();
                println!("{name:<15} MAE {:.4}  ({} tensors swapped)", report.mae, changed.len());
                println!("{:<15} per step [{}]", "", curve.join(" "));
            }
            (Err(e), _) => println!("{name:<15} failed: {e}"),
            (_, Err(e)) => println!("{name:<15} audit failed: {e}"),
        }
    }
    Ok(())
}
