//! External-memory attention: every time step attends over `L` trainable
//! memory slots shared by the whole dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcnformer::attention::{tea_with_weights, ExternalMemory};
use tcnformer::tensor::{self, Tensor};

fn main() -> tcnformer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, t, c, l) = (2, 6, 8, 4);
    let mem = ExternalMemory::new(&mut rng, l, c)?;
    let x = Tensor::new(vec![b, t, c], (0..b * t * c).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect())?;
    let out = tea_with_weights(&x, &mem)?;
    println!("output shape {:?}, weights shape {:?}", out.output.shape(), out.weights.shape());
    let w = out.weights.to_vec();
    for step in 0..t {
        let row = &w[step * l..(step + 1) * l];
        let s: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  sample 0, step {step}: slot weights [{}] sum {:.6}", s.join(", "), row.iter().sum::<f64>());
    }

    // the memories are ordinary parameters: a loss gradient reaches both
    tensor::sum(&out.output).backward()?;
    let norm = |g: Vec<f64>| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("|dL/dM_k| = {:.4}", norm(mem.m_k.grad().unwrap_or_default()));
    println!("|dL/dM_v| = {:.4}", norm(mem.m_v.grad().unwrap_or_default()));
    Ok(())
}
