//! Deterministic mini-batch trainer: Adam with bias correction and L2
//! weight decay, global-norm gradient clipping, cosine-annealed learning
//! rate, early stopping on validation loss with best-epoch restore.
//!
//! Batch elements evaluate concurrently (each with a pre-drawn dropout
//! seed); gradients are then averaged in index order and the update is
//! applied serially, so a fixed seed reproduces training bit for bit
//! regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::Rng;

use super::model::{cross_entropy, Model};
use super::conv::Mode;
use super::Dataset;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 16,
            max_epochs: 50,
            patience: 10,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// `epoch,train_loss,val_loss,val_acc,lr` CSV.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for m in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            m.epoch, m.train_loss, m.val_loss, m.val_acc, m.lr
        ));
    }
    out
}

/// Adam optimizer state over the flat parameter vector (the training-
/// level optimizer, with bias correction — distinct from the adam-style
/// recurrence variant).
struct AdamOpt {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamOpt {
    fn new(n: usize) -> Self {
        AdamOpt { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One update step; `grad` has already been clipped. Weight decay is
    /// folded into the gradient before the moment updates.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] + weight_decay * params[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Scale `grad` so its global L2 norm is at most `clip`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], clip: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Cosine-annealed learning rate at a given epoch.
pub fn cosine_lr(base: f64, epoch: usize, max_epochs: usize) -> f64 {
    if max_epochs == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / max_epochs as f64).cos())
}

/// Reusable epoch-level training driver.
pub struct Trainer {
    opt: AdamOpt,
    pub tc: TrainConfig,
    rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: &Model, tc: &TrainConfig) -> Self {
        Trainer {
            opt: AdamOpt::new(model.num_params()),
            tc: tc.clone(),
            rng: Rng::new(tc.seed),
            step: 0,
        }
    }

    /// One pass over the training windows in shuffled mini-batches;
    /// returns the mean training loss. Fails on a non-finite loss.
    pub fn run_epoch(&mut self, model: &mut Model, data: &Dataset, epoch: usize) -> Result<f64> {
        let lr = cosine_lr(self.tc.lr, epoch, self.tc.max_epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        let n_params = model.num_params();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;

        for batch in order.chunks(self.tc.batch.max(1)) {
            // pre-draw per-sample dropout seeds so batch parallelism
            // cannot reorder rng consumption
            let seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
            let windows: Vec<&crate::numkit::RealSeq> =
                batch.iter().map(|&i| &data.windows[i]).collect();
            let outputs = model.forward_batch(&windows, Mode::Train, &seeds)?;

            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            let mut caches = Vec::with_capacity(batch.len());
            let mut d_logits = Vec::with_capacity(batch.len());
            for ((logits, cache), &i) in outputs.into_iter().zip(batch) {
                let (loss, mut dl) = cross_entropy(&logits, data.labels[i])?;
                batch_loss += loss;
                // scale so the summed batch gradient is the mean gradient
                dl.iter_mut().for_each(|g| *g *= inv);
                caches.push(cache);
                d_logits.push(dl);
            }
            batch_loss *= inv;
            self.step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { step: self.step });
            }
            loss_sum += batch_loss * batch.len() as f64;
            seen += batch.len();

            let grads = model.backward_batch(&caches, &d_logits)?;
            let mut grad = grads.flatten(model.cfg.freeze_variant);
            debug_assert_eq!(grad.len(), n_params);
            clip_global_norm(&mut grad, self.tc.clip_norm);
            let mut params = model.params();
            self.opt.step(&mut params, &grad, lr, self.tc.weight_decay);
            model.set_params(&params);
            // pooled batch statistics fold into the running estimates once
            model.conv.update_running_stats(&caches[0].conv);
        }
        Ok(loss_sum / seen.max(1) as f64)
    }
}

/// Mean loss and accuracy over a dataset in eval mode.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let results: Vec<Result<(f64, bool)>> = data
        .windows
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(w, &label)| {
            let (logits, _) = model.forward(w, Mode::Eval, &mut Rng::new(0))?;
            let (loss, _) = cross_entropy(&logits, label)?;
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok((loss, pred == label))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (loss, ok) = r?;
        loss_sum += loss;
        correct += ok as usize;
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Full training run with early stopping; the model is left at the
/// best-validation-loss parameters (never at a later epoch).
pub fn train(
    model: &mut Model,
    train_data: &Dataset,
    val_data: &Dataset,
    tc: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    let mut trainer = Trainer::new(model, tc);
    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    // snapshot includes the batch-norm running statistics: they are model
    // state too, and keep moving after the best epoch
    let mut best_state =
        (model.params(), model.conv.running_mean.clone(), model.conv.running_var.clone());
    let mut best_epoch = 0usize;
    for epoch in 0..tc.max_epochs {
        let train_loss = trainer.run_epoch(model, train_data, epoch)?;
        let (val_loss, val_acc) = evaluate(model, val_data)?;
        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr: cosine_lr(tc.lr, epoch, tc.max_epochs),
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_state =
                (model.params(), model.conv.running_mean.clone(), model.conv.running_var.clone());
            best_epoch = epoch;
        } else if epoch - best_epoch >= tc.patience {
            break;
        }
    }
    model.set_params(&best_state.0);
    model.conv.running_mean = best_state.1;
    model.conv.running_var = best_state.2;
    Ok(history)
}

/// Validation accuracy per (beta, alpha) cell with the momentum
/// coefficients frozen at the cell values. Cells whose training run
/// diverges record NaN and the sweep continues.
pub fn grid_search(
    beta_grid: &[f64],
    alpha_grid: &[f64],
    train_data: &Dataset,
    val_data: &Dataset,
    base_cfg: &super::model::ModelConfig,
    tc: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    if beta_grid.is_empty() || alpha_grid.is_empty() {
        return Err(Error::EmptyInput { what: "sweep grids" });
    }
    let mut matrix = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let mut row = Vec::with_capacity(alpha_grid.len());
        for &alpha in alpha_grid {
            let mut cfg = base_cfg.clone();
            cfg.variant = super::model::VariantConfig::Momentum(
                crate::momentum_variants::MomentumParams::from_values(alpha, beta),
            );
            cfg.freeze_variant = true;
            let mut model = Model::new(cfg, &mut Rng::new(tc.seed));
            let acc = match train(&mut model, train_data, val_data, tc) {
                Ok(_) => evaluate(&model, val_data)?.1,
                Err(Error::Divergence { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            row.push(acc);
        }
        matrix.push(row);
    }
    Ok(matrix)
}

/// Sweep CSV: beta rows, alpha columns.
pub fn sweep_csv(beta_grid: &[f64], alpha_grid: &[f64], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("beta\\alpha");
    for a in alpha_grid {
        out.push_str(&format!(",{a}"));
    }
    out.push('\n');
    for (b, row) in beta_grid.iter().zip(matrix) {
        out.push_str(&format!("{b}"));
        for v in row {
            if v.is_nan() {
                out.push_str(",NaN");
            } else {
                out.push_str(&format!(",{v:.16e}"));
            }
        }
        out.push('\n');
    }
    out
}
