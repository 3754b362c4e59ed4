//! Dilated causal convolution and the TCN receptive field.
//!
//! Run with `cargo run --example causal_conv`.

use tcnformer::tcn::{receptive_field, TcnSpec};
use tcnformer::tensor::{conv1d_causal, Tensor};

fn main() -> tcnformer::Result<()> {
    // y[t] = x[t] + x[t-1]: tap 0 reads the current step, tap 1 one step back
    let x = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0])?;
    let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0])?;
    let b = Tensor::new(vec![1], vec![0.0])?;
    println!("k=2 d=1 on [1,2,3,4]      -> {:?}", conv1d_causal(&x, &w, &b, 1)?.to_vec());

    // dilation 2 skips a step: y[t] = x[t] + x[t-2]
    let x = Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0])?;
    println!("k=2 d=2 on [1,2,3,4,5]    -> {:?}", conv1d_causal(&x, &w, &b, 2)?.to_vec());

    let spec = TcnSpec::default();
    println!(
        "default TCN: kernel {}, dilations {:?}, channels {:?}, receptive field {} hours",
        spec.kernel,
        spec.dilations,
        spec.channels,
        receptive_field(&spec)
    );
    for depth in 1..=4 {
        let spec = TcnSpec {
            dilations: (0..depth).map(|i| 1 << i).collect(),
            channels: vec![8; depth],
            ..TcnSpec::default()
        };
        println!("  {depth} block(s): receptive field {}", receptive_field(&spec));
    }
    Ok(())
}
