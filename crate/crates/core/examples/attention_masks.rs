//! Causal windowed attention: the mask, the normalized weights and the
//! score-multiply cost against full self-attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcnformer::attention::{
    causal_window_mask, ct_msa_with_weights, full_attention_map, reset_score_macs, score_macs,
    standard_msa, SelfAttention,
};
use tcnformer::nn::Context;
use tcnformer::tensor::Tensor;

fn main() -> tcnformer::Result<()> {
    let mask = causal_window_mask(8, 4)?;
    println!("causal window mask, T=8, W=4 (1 = may attend):");
    for i in 0..8 {
        let row: String = (0..8).map(|j| if mask.get(i, j) { '1' } else { '.' }).collect();
        println!("  {row}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t, c) = (8, 4);
    let attn = SelfAttention::new(&mut rng, c, 2, 4, 0.0)?;
    let x = Tensor::new(vec![1, t, c], (0..t * c).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let out = ct_msa_with_weights(&x, &attn, &mut Context::eval())?;
    let map = full_attention_map(&out.weights);
    println!("\nhead 0 attention weights:");
    for i in 0..t {
        let row: Vec<String> = (0..t).map(|j| format!("{:.2}", map.data()[i * t + j])).collect();
        println!("  {}", row.join(" "));
    }

    println!("\nscore multiply-accumulates, C=32, 4 heads:");
    for t in [24, 48, 72] {
        for w in [12, 24] {
            let a = SelfAttention::new(&mut rng, 32, 4, w, 0.0)?;
            let x = Tensor::zeros(vec![1, t, 32]);
            reset_score_macs();
            ct_msa_with_weights(&x, &a, &mut Context::eval())?;
            let windowed = score_macs();
            reset_score_macs();
            standard_msa(&x, &a, &mut Context::eval())?;
            let full = score_macs();
            println!(
                "  T={t:>2} W={w:>2}: windowed {windowed:>6}, full {full:>6}, ratio {:.2} (T/W = {:.2})",
                full as f64 / windowed as f64,
                t as f64 / w as f64
            );
        }
    }
    Ok(())
}
