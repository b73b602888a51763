//! Gradient-flow experiment runner: trains a small classifier on the
//! delayed-recall task and records the per-time-step gradient norms of
//! the last block's recurrent state once before training and once after
//! each epoch.
//!
//! The probe model reads out the LAST time step and disables dropout, so
//! the recorded norms measure exactly how much loss gradient survives the
//! trip backward through time. The probe itself is a single fixed window
//! (the first training window), forwarded in train mode with a pinned
//! rng, so reports are bit-reproducible under a fixed seed.

use crate::error::Result;
use crate::gradient_lab::{GradFlowConfig, GradFlowVariant, GradientReport};
use crate::momentum_variants::MomentumParams;
use crate::numkit::Rng;
use crate::affine_scan::ScanMode;

use super::conv::Mode;
use super::model::{cross_entropy, Model, ModelConfig, Readout, VariantConfig};
use super::train::{TrainConfig, Trainer};
use super::{make_delayed_recall, Dataset};

fn probe(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    let (logits, cache) = model.forward(&data.windows[0], Mode::Train, &mut Rng::new(0))?;
    let (_, d_logits) = cross_entropy(&logits, data.labels[0])?;
    let (_, norms) = model.backward(&cache, &d_logits)?;
    Ok(norms)
}

pub fn run(cfg: &GradFlowConfig) -> Result<GradientReport> {
    let mut rng = Rng::new(cfg.seed);
    let mut task_rng = rng.fork(1);
    let mut model_rng = rng.fork(2);
    let train_seed = rng.next_u64();

    let data = make_delayed_recall(
        &mut task_rng,
        cfg.seq_len,
        cfg.delay,
        cfg.classes,
        cfg.train_windows,
        cfg.noise,
    )?;

    let (variant, freeze) = match cfg.variant {
        GradFlowVariant::Vanilla => (VariantConfig::Vanilla, false),
        GradFlowVariant::Momentum { alpha, beta } => {
            // pinned coefficients: the experiment characterizes a fixed
            // (alpha, beta), not whatever training drifts them to
            (VariantConfig::Momentum(MomentumParams::from_values(alpha, beta)), true)
        }
    };
    let model_cfg = ModelConfig {
        in_channels: 6,
        d_model: cfg.d_model,
        n_layers: cfg.n_layers,
        state_dim: cfg.state_dim,
        classes: cfg.classes,
        dropout: 0.0,
        variant,
        readout: Readout::LastStep,
        freeze_variant: freeze,
        delta_init: cfg.delta_init,
        scan_mode: ScanMode::Parallel,
    };
    let mut model = Model::new(model_cfg, &mut model_rng);

    let tc = TrainConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        max_epochs: cfg.epochs.max(1),
        patience: usize::MAX,
        seed: train_seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&model, &tc);

    let mut norms = Vec::with_capacity(cfg.epochs + 1);
    norms.push(probe(&model, &data)?);
    for epoch in 0..cfg.epochs {
        trainer.run_epoch(&mut model, &data, epoch)?;
        norms.push(probe(&model, &data)?);
    }
    Ok(GradientReport { norms, config: cfg.describe() })
}
