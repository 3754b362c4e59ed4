//! Saves a model with its scaler to the binary checkpoint format, reloads it
//! and compares forecasts.

use tcnformer::checkpoint::{Checkpoint, CheckpointMeta};
use tcnformer::data::ScalerParams;
use tcnformer::model::{Tcnformer, TcnformerSpec};
use tcnformer::tensor::Array;

fn main() -> tcnformer::Result<()> {
    let spec = TcnformerSpec::default();
    let model = Tcnformer::new(spec.clone(), 5)?;
    let meta = CheckpointMeta {
        epoch: 0,
        best_val_loss: f64::INFINITY,
        seed: 5,
        scaler: ScalerParams::new(0.140, 10.960)?,
        spec,
    };
    let dir = std::env::temp_dir().join("tcnformer-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.bin");
    Checkpoint::from_model(&model, meta).save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();

    let loaded = Checkpoint::load(&path)?;
    let restored = loaded.to_model()?;
    let x = Array::new(vec![1, 72], (0..72).map(|t| 0.5 + 0.3 * (t as f64 / 4.0).sin()).collect())?;
    let a = model.predict(&x)?;
    let b = restored.predict(&x)?;
    let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!(
        "{} tensors, {} bytes at {}; max forecast difference after reload {diff:.2e}",
        loaded.entries.len(),
        bytes,
        path.display()
    );
    Ok(())
}
