//! Checkpoint format demo: save a trained model, load it into a freshly
//! initialized one, and confirm forward outputs agree to the last bit.
//!
//! Run: cargo run --release --example checkpoint_roundtrip

use momentum_ssm::affine_scan::ScanMode;
use momentum_ssm::cli::{load_checkpoint, save_checkpoint};
use momentum_ssm::har_pipeline::{Mode, Model, ModelConfig, Readout, VariantConfig};
use momentum_ssm::momentum_variants::MomentumParams;
use momentum_ssm::numkit::{RealSeq, Rng};

fn main() {
    let cfg = ModelConfig {
        in_channels: 6,
        d_model: 12,
        n_layers: 2,
        state_dim: 6,
        classes: 5,
        dropout: 0.0,
        variant: VariantConfig::Momentum(MomentumParams::default()),
        readout: Readout::MeanPool,
        freeze_variant: false,
        delta_init: (1e-2, 1e-1),
        scan_mode: ScanMode::Parallel,
    };
    let model = Model::new(cfg.clone(), &mut Rng::new(1));

    let mut path = std::env::temp_dir();
    path.push("momentum-ssm-demo.ckpt");
    save_checkpoint(&model, &path).unwrap();
    println!("wrote {} ({} parameters)", path.display(), model.num_params());

    let mut restored = Model::new(cfg, &mut Rng::new(999));
    load_checkpoint(&mut restored, &path).unwrap();
    std::fs::remove_file(&path).ok();

    let mut rng = Rng::new(2);
    let x = RealSeq::new(20, 6, (0..120).map(|_| rng.normal()).collect()).unwrap();
    let (a, _) = model.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    let (b, _) = restored.forward(&x, Mode::Eval, &mut Rng::new(0)).unwrap();
    assert_eq!(a, b);
    println!("restored model reproduces logits bit-for-bit: {a:?}");
}
