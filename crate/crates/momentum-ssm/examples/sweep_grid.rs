//! Miniature (beta, alpha) hyperparameter sweep with frozen momentum
//! coefficients per cell, printing the validation-accuracy matrix.
//!
//! The full 7x7 grids are the CLI defaults (`mssm sweep`); this example
//! runs a 3x3 corner of them at desk scale.
//!
//! Run: cargo run --release --example sweep_grid

use momentum_ssm::affine_scan::ScanMode;
use momentum_ssm::har_pipeline::{
    grid_search, make_delayed_recall, sweep_csv, ModelConfig, Readout, TrainConfig, VariantConfig,
};
use momentum_ssm::momentum_variants::MomentumParams;
use momentum_ssm::numkit::Rng;

fn main() {
    let mut rng = Rng::new(31);
    let (len, delay, classes) = (32, 16, 4);
    let train_data = make_delayed_recall(&mut rng, len, delay, classes, 64, 0.8).unwrap();
    let val_data = make_delayed_recall(&mut rng, len, delay, classes, 32, 0.8).unwrap();

    let beta_grid = [0.0, 0.9, 0.99];
    let alpha_grid = [0.1, 0.6, 1.0];
    let base_cfg = ModelConfig {
        in_channels: 6,
        d_model: 8,
        n_layers: 1,
        state_dim: 4,
        classes,
        dropout: 0.0,
        variant: VariantConfig::Momentum(MomentumParams::default()),
        readout: Readout::MeanPool,
        freeze_variant: true,
        delta_init: (1e-2, 1e-1),
        scan_mode: ScanMode::Parallel,
    };
    let tc = TrainConfig { max_epochs: 6, batch: 16, seed: 3, ..Default::default() };
    let matrix = grid_search(&beta_grid, &alpha_grid, &train_data, &val_data, &base_cfg, &tc)
        .unwrap();
    print!("{}", sweep_csv(&beta_grid, &alpha_grid, &matrix));
}
