//! Loss, optimizers and the training loop.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{TensorError, TrainError};
use crate::model::Tcnformer;
use crate::nn::{Context, Mode};
use crate::tensor::{self, Array, Tensor};

/// Mean squared error over every entry.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Shape {
            op: "mse_loss".into(),
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let d = tensor::sub(pred, target)?;
    Ok(tensor::mean(&tensor::mul(&d, &d)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent, `θ ← θ − η·g`.
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

/// Optimizer state: Adam moments per parameter, or nothing for SGD.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[(String, Tensor)]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; parameters
    /// without a gradient are left alone.
    pub fn apply(&mut self, params: &[(String, Tensor)], grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let mut data = p.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, gj) in data.iter_mut().zip(g) {
                        *x -= self.lr * gj;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..g.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Reads every gradient, failing on the first non-finite entry.
pub fn collect_grads(params: &[(String, Tensor)]) -> Result<Vec<Option<Vec<f64>>>, TrainError> {
    params
        .iter()
        .map(|(name, p)| {
            let g = p.grad();
            if let Some(g) = &g {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(TrainError::NanGradient(name.clone()));
                }
            }
            Ok(g)
        })
        .collect()
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            seed: 0,
            patience: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err("epochs, batch_size and patience must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err("learning_rate and clip_norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    /// `NaN` when there is no validation set.
    pub val_mse: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,train_mse,val_mse,seconds";

/// Per-epoch log. Losses are written with shortest round-trip formatting so
/// two logs compare bitwise; wall-clock seconds naturally differ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn row(e: &EpochLog) -> String {
        format!("{},{},{},{:.3}", e.epoch, e.train_mse, e.val_mse, e.seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{}", Self::row(e));
        }
        s
    }

    /// The log without the timing column, for reproducibility checks.
    pub fn deterministic_part(&self) -> String {
        self.epochs
            .iter()
            .map(|e| format!("{},{},{}\n", e.epoch, e.train_mse, e.val_mse))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Eval-mode MSE over a window set, batched. Touches no parameters, buffers
/// or training randomness.
pub fn evaluate_mse(model: &Tcnformer, set: &WindowSet, batch_size: usize) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = set.select(chunk);
        let pred = model.predict(&b.inputs)?;
        total += pred
            .data()
            .iter()
            .zip(b.targets.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    Ok(total / (set.len() * set.horizon()) as f64)
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(
    model: &Tcnformer,
    params: &[(String, Tensor)],
    opt: &mut OptimState,
    inputs: &Array,
    targets: &Array,
    ctx: &mut Context,
    clip_norm: f64,
) -> Result<f64, TrainError> {
    model.zero_grad();
    let pred = model.forward(&Tensor::from_array(inputs), ctx)?;
    let loss = mse_loss(&pred, &Tensor::from_array(targets))?;
    let value = loss.item();
    if !value.is_finite() {
        return Ok(value);
    }
    loss.backward()?;
    let mut grads = collect_grads(params)?;
    clip_global_norm(&mut grads, clip_norm);
    opt.apply(params, &grads);
    Ok(value)
}

/// Mini-batch training with seeded shuffling, validation each epoch,
/// best-validation restore and early stopping. Without a validation set the
/// epoch's training loss selects the best epoch instead.
pub fn train_model(
    model: &Tcnformer,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    cfg.validate().map_err(|m| TrainError::Tensor(TensorError::Contract(m)))?;
    let params = model.parameters();
    let mut opt = OptimState::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut ctx = Context::new(Mode::Train, dropout_rng);

    let mut log = TrainingLog::default();
    let mut best = (0usize, f64::INFINITY, model.snapshot());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk);
            let step = train_step(model, &params, &mut opt, &batch.inputs, &batch.targets, &mut ctx, cfg.clip_norm);
            let loss = match step {
                Ok(l) if l.is_finite() => l,
                Ok(_) => {
                    model.restore(&best.2);
                    return Err(TrainError::Diverged { epoch, restored_epoch: best.0 });
                }
                Err(e) => {
                    model.restore(&best.2);
                    return Err(e);
                }
            };
            sum += loss * chunk.len() as f64;
        }
        let train_mse = sum / train.len() as f64;
        let val_mse = evaluate_mse(model, val, cfg.batch_size)?;
        let entry = EpochLog { epoch, train_mse, val_mse, seconds: clock.elapsed().as_secs_f64() };
        on_epoch(&entry);
        log.epochs.push(entry);

        let score = if val.is_empty() { train_mse } else { val_mse };
        if score < best.1 {
            best = (epoch, score, model.snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.restore(&best.2);
    Ok(TrainOutcome { log, best_epoch: best.0, best_val_mse: best.1, stopped_early })
}
