//! Finite-difference check of every parameter of a tiny forecaster.

use tcnformer::model::{Tcnformer, TcnformerSpec};
use tcnformer::nn::Context;
use tcnformer::tensor::{finite_diff_grad, relative_error, Tensor};
use tcnformer::training::mse_loss;

fn main() -> tcnformer::Result<()> {
    let spec = TcnformerSpec::tiny();
    let model = Tcnformer::new(spec.clone(), 7)?;
    let (b, t, h) = (3, spec.lookback, spec.horizon);
    let x = Tensor::new(vec![b, t], (0..b * t).map(|i| 0.5 + 0.4 * (i as f64 * 0.7).sin()).collect())?;
    let y = Tensor::new(vec![b, h], (0..b * h).map(|i| 0.5 + 0.3 * (i as f64).cos()).collect())?;

    // batch statistics make the loss depend on the whole batch, which is
    // fine: eval mode would hide the batch-norm gradient path
    let loss = || {
        let mut ctx = Context::new(tcnformer::nn::Mode::Train, rand::SeedableRng::seed_from_u64(0));
        mse_loss(&model.forward(&x, &mut ctx)?, &y)
    };
    model.zero_grad();
    loss()?.backward()?;
    let mut rows = Vec::new();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for (name, p) in model.parameters() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = finite_diff_grad(loss, &p, 1e-6)?;
        all_a.extend_from_slice(&analytic);
        all_n.extend_from_slice(&numeric);
        rows.push((name, analytic, numeric));
    }
    let global = all_a.iter().map(|g| g * g).sum::<f64>().sqrt();
    // conv biases feeding batch statistics have an exactly zero gradient, so
    // their error is measured against the overall gradient scale
    let floor = 1e-6 * global;
    for (name, a, n) in &rows {
        let err = relative_error(a, n, floor);
        println!("{name:<40} {:>4} values  rel. error {err:.2e}", a.len());
    }
    println!("whole-model relative error {:.2e}", relative_error(&all_a, &all_n, 1e-12));
    Ok(())
}
