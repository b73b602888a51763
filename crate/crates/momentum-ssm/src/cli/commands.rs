//! The five subcommands behind the `mssm` binary. Each resolves its
//! configuration, runs library code, and writes CSV artifacts plus a
//! resolved-config echo into the output directory.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::affine_scan::{
    scan_parallel, scan_sequential, AffineElement, ScanMode, StructuredTransition, TransitionKind,
};
use crate::error::{Error, Result};
use crate::gradient_lab::{
    dense_momentum_jacobian, momentum_jacobian_product, gradient_heatmap, GradFlowConfig,
    GradFlowVariant,
};
use crate::har_pipeline::{
    cross_entropy, evaluate, grid_search, make_delayed_recall, metrics_csv, sweep_csv, train,
    window_stream, zscore, ChannelStats, Dataset, Mode, Model, ModelConfig, Readout, TrainConfig,
    VariantConfig, WindowConfig,
};
use crate::heavyball_s4::{discretize_implicit, spectral_radius, HeavyBallParams};
use crate::momentum_variants::{
    build_affine, impulse_response, momentum_forward_mode, momentum_step,
    normalized_update_bound, AdamMomentumParams, ComplexMomentumParams, MomentumParams,
};
use crate::numkit::{ComplexVal, DiagVec, RealSeq, Rng};
use crate::selective_ssm::{ssm_forward_mode, SelectiveParams};

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;

// ───────────────────────── scan-bench ─────────────────────────

pub const SCAN_BENCH_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("config", ""),
    ("lengths", "1,64,1024,4096"),
    ("state-dim", "16"),
    ("dense-width", "8"),
    ("kinds", "dense,diagonal,momentum,heavyball"),
    ("repeats", "5"),
    ("layer-bench", "true"),
];

fn random_elements(
    kind: TransitionKind,
    len: usize,
    n: usize,
    dense_width: usize,
    rng: &mut Rng,
) -> Vec<AffineElement> {
    (0..len)
        .map(|_| {
            let (transition, w) = match kind {
                TransitionKind::Dense => (
                    StructuredTransition::Dense {
                        width: dense_width,
                        rows: (0..dense_width * dense_width).map(|_| rng.range(-0.5, 0.5)).collect(),
                    },
                    dense_width,
                ),
                TransitionKind::Diagonal => (
                    StructuredTransition::Diagonal(DiagVec {
                        values: (0..n).map(|_| rng.range(-0.99, 0.99)).collect(),
                    }),
                    n,
                ),
                TransitionKind::MomentumBlock => (
                    StructuredTransition::momentum(
                        DiagVec { values: (0..n).map(|_| rng.range(0.01, 0.99)).collect() },
                        rng.range(0.0, 0.999),
                    ),
                    2 * n,
                ),
                TransitionKind::HeavyBallBlock => (
                    StructuredTransition::HeavyBallBlock(
                        (0..n)
                            .map(|_| {
                                [
                                    rng.range(-0.9, 0.9),
                                    rng.range(-0.9, 0.9),
                                    rng.range(-0.9, 0.9),
                                    rng.range(-0.9, 0.9),
                                ]
                            })
                            .collect(),
                    ),
                    2 * n,
                ),
            };
            let offset = (0..w).map(|_| rng.range(-1.0, 1.0)).collect();
            AffineElement { transition, offset }
        })
        .collect()
}

fn parse_kind(name: &str) -> Result<TransitionKind> {
    match name {
        "dense" => Ok(TransitionKind::Dense),
        "diagonal" => Ok(TransitionKind::Diagonal),
        "momentum" => Ok(TransitionKind::MomentumBlock),
        "heavyball" => Ok(TransitionKind::HeavyBallBlock),
        other => Err(Error::Config(format!("unknown scan kind '{other}'"))),
    }
}

fn median_ns<F: FnMut()>(repeats: usize, mut f: F) -> u64 {
    let mut times: Vec<u128> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[times.len() / 2] as u64
}

pub fn cmd_scan_bench(cfg: &RunConfig) -> Result<i32> {
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let lengths = cfg.usize_list("lengths")?;
    let n = cfg.usize("state-dim")?;
    let dense_width = cfg.usize("dense-width")?;
    let repeats = cfg.usize("repeats")?;
    let seed = cfg.u64("seed")?;

    let mut csv = String::from("kind,L,N,seq_ns,par_ns,speedup,combine_depth\n");
    for kind_name in cfg.str_list("kinds") {
        let kind = parse_kind(&kind_name)?;
        for &len in &lengths {
            let mut rng = Rng::new(seed ^ (len as u64).wrapping_mul(0x9E37));
            let elements = random_elements(kind, len, n, dense_width, &mut rng);
            let s0 = vec![0.0; elements[0].width()];
            let seq_ns = median_ns(repeats, || {
                scan_sequential(&elements, &s0).expect("bench scan");
            });
            let par_ns = median_ns(repeats, || {
                scan_parallel(&elements, &s0).expect("bench scan");
            });
            let depth = scan_parallel(&elements, &s0)?.combine_depth;
            let speedup = seq_ns as f64 / par_ns.max(1) as f64;
            csv.push_str(&format!(
                "{kind_name},{len},{n},{seq_ns},{par_ns},{speedup:.4},{depth}\n"
            ));
        }
    }

    if cfg.bool("layer-bench")? {
        // forward wall-time of the momentum layer against the vanilla one
        let (d, sn, len) = (128, 64, 512);
        let mut rng = Rng::new(seed ^ 0xBEEF);
        let p = SelectiveParams::init(d, sn, &mut rng);
        let x = RealSeq::new(len, d, (0..len * d).map(|_| rng.normal()).collect())
            .expect("finite bench input");
        let mp = MomentumParams::default();
        let vanilla_ns = median_ns(repeats, || {
            ssm_forward_mode(&p, &x, ScanMode::Parallel).expect("bench forward");
        });
        let momentum_ns = median_ns(repeats, || {
            momentum_forward_mode(&p, &mp, &x, ScanMode::Parallel).expect("bench forward");
        });
        let (_, vc) = ssm_forward_mode(&p, &x, ScanMode::Parallel)?;
        let (_, mc) = momentum_forward_mode(&p, &mp, &x, ScanMode::Parallel)?;
        csv.push_str(&format!(
            "# layer_forward_bench d_model={d} state_dim={sn} L={len}\n\
             # vanilla_ns={vanilla_ns} momentum_ns={momentum_ns} wall_ratio={:.4}\n\
             # flop_ratio={:.4} expected_wall_ratio_band=1.0-2.5\n",
            momentum_ns as f64 / vanilla_ns.max(1) as f64,
            mc.base.flops as f64 / vc.flops as f64,
        ));
    }

    fs::write(out_dir.join("scan_bench.csv"), &csv)?;
    cfg.write_echo(&out_dir)?;
    print!("{csv}");
    Ok(0)
}

// ───────────────────────── check ─────────────────────────

pub const CHECK_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("config", ""),
    ("props", "inverse,stability,affine,jacobian,adam_bound,impulse,gradcheck"),
];

struct CheckResult {
    name: &'static str,
    cases: usize,
    worst: f64,
    tol: f64,
    pass: bool,
}

fn check_inverse(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x11);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 10_000 {
        let gamma = rng.range(1e-6, 5.0);
        let delta = rng.range(1e-6, 2.0);
        let a = rng.range(-3.0, 5.0);
        if (1.0 + gamma * delta + delta * delta * a).abs() < 1e-2 {
            continue;
        }
        let p = HeavyBallParams::new(gamma, DiagVec { values: vec![a] }, vec![1.0], vec![1.0])
            .expect("valid draw");
        let d = discretize_implicit(&p, delta).expect("nonsingular draw");
        let b = d.blocks()[0];
        let m = [1.0 + gamma * delta, delta * a, -delta, 1.0];
        let prod = [
            m[0] * b[0] + m[1] * b[2],
            m[0] * b[1] + m[1] * b[3],
            m[2] * b[0] + m[3] * b[2],
            m[2] * b[1] + m[3] * b[3],
        ];
        let id = [1.0, 0.0, 0.0, 1.0];
        for k in 0..4 {
            worst = worst.max((prod[k] - id[k]).abs());
        }
        cases += 1;
    }
    CheckResult { name: "inverse", cases, worst, tol: 1e-12, pass: worst <= 1e-12 }
}

fn check_stability(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x22);
    let mut worst = 0.0f64;
    let cases = 10_000;
    for _ in 0..cases {
        let gamma = rng.range(1e-3, 5.0);
        let delta = rng.range(1e-3, 2.0);
        let a = rng.range(0.0, 6.0);
        let p = HeavyBallParams::new(gamma, DiagVec { values: vec![a] }, vec![1.0], vec![1.0])
            .expect("valid draw");
        let r = spectral_radius(&p, delta).expect("nonsingular");
        worst = worst.max(r[0] - 1.0);
    }
    CheckResult { name: "stability", cases, worst, tol: 1e-12, pass: worst <= 1e-12 }
}

fn check_affine(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x33);
    let (n, len) = (8, 128);
    let mut worst = 0.0f64;
    let cases = 50;
    for _ in 0..cases {
        let mp = MomentumParams::from_values(rng.range(-1.0, 2.0), rng.range(0.0, 0.999));
        let a_bars: Vec<DiagVec> = (0..len)
            .map(|_| DiagVec { values: (0..n).map(|_| rng.range(0.01, 0.99)).collect() })
            .collect();
        let gs: Vec<Vec<f64>> =
            (0..len).map(|_| (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).collect();
        let elements: Vec<AffineElement> =
            (0..len).map(|i| build_affine(&a_bars[i], &gs[i], &mp).expect("shapes")).collect();
        let out = scan_parallel(&elements, &vec![0.0; 2 * n]).expect("scan");
        let (mut v, mut h) = (vec![0.0; n], vec![0.0; n]);
        for i in 0..len {
            let (vn, hn) = momentum_step(&v, &h, &a_bars[i], &gs[i], &mp).expect("shapes");
            v = vn;
            h = hn;
            for j in 0..n {
                let eh = (out.states[i][j] - h[j]).abs() / h[j].abs().max(1.0);
                let ev = (out.states[i][n + j] - v[j]).abs() / v[j].abs().max(1.0);
                worst = worst.max(eh).max(ev);
            }
        }
    }
    CheckResult { name: "affine", cases, worst, tol: 1e-12, pass: worst <= 1e-12 }
}

fn check_jacobian(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x44);
    let mut worst = 0.0f64;
    let cases = 20;
    for _ in 0..cases {
        let n = 3;
        let len = 1 + rng.below(50);
        let a_bars: Vec<DiagVec> = (0..len)
            .map(|_| DiagVec { values: (0..n).map(|_| rng.range(0.05, 0.999)).collect() })
            .collect();
        let beta = rng.range(0.0, 0.999);
        let t = rng.below(len);
        let t_end = t + rng.below(len - t);
        let jb = momentum_jacobian_product(&a_bars, beta, t, t_end).expect("range");
        let dense = dense_momentum_jacobian(&a_bars, beta, t, t_end).expect("range");
        let w = 2 * n;
        for i in 0..n {
            let pairs = [
                (jb.upper_left.values[i], dense[i * w + i]),
                (jb.upper_right.values[i], dense[i * w + n + i]),
                (jb.lower_right, dense[(n + i) * w + n + i]),
            ];
            for (a, b) in pairs {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            }
        }
    }
    CheckResult { name: "jacobian", cases, worst, tol: 1e-10, pass: worst <= 1e-10 }
}

fn check_adam_bound(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x55);
    let mut worst = 0.0f64;
    let cases = 100;
    for _ in 0..cases {
        let ap = AdamMomentumParams::new(
            rng.range(0.1, 2.0),
            rng.range(0.0, 0.99),
            rng.range(0.0, 0.99),
            rng.log_uniform(1e-10, 1e-4),
        )
        .expect("valid draw");
        let b_max = rng.range(0.1, 3.0);
        let (uniform, _) = normalized_update_bound(&ap, b_max).expect("beta < 1");
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut sup = 0.0f64;
        for _ in 0..10_000 {
            let g = rng.range(-b_max, b_max);
            m = ap.gamma() * m + (1.0 - ap.gamma()) * g * g;
            v = ap.beta() * v + ap.alpha * g;
            sup = sup.max((v / (m.sqrt() + ap.eps)).abs());
        }
        worst = worst.max(sup / uniform);
    }
    // the bound is an exact inequality: the observed ratio must be <= 1
    CheckResult { name: "adam_bound", cases, worst, tol: 1.0, pass: worst <= 1.0 }
}

fn check_impulse(seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed ^ 0x66);
    let mut worst = 0.0f64;
    let cases = 50;
    for _ in 0..cases {
        let cp = ComplexMomentumParams::new(
            rng.range(0.05, 1.0),
            rng.range(-3.0, 3.0),
            rng.range(0.1, 2.0),
        )
        .expect("valid draw");
        let beta = cp.beta();
        // v_k = beta^k v_0 for a unit impulse; compare the recurrence
        // against the polar closed form for k <= 200
        let mut v = ComplexVal::new(cp.alpha, 0.0);
        for k in 0..=200usize {
            let closed = impulse_response(&cp, k);
            let diff = (v - closed).magnitude();
            worst = worst.max(diff / closed.magnitude().max(1e-30));
            v = v * beta;
        }
    }
    CheckResult { name: "impulse", cases, worst, tol: 1e-10, pass: worst <= 1e-10 }
}

fn check_gradcheck(seed: u64) -> CheckResult {
    let mut worst = 0.0f64;
    let variants = [
        VariantConfig::Vanilla,
        VariantConfig::Momentum(MomentumParams::from_values(0.7, 0.85)),
        VariantConfig::Complex(ComplexMomentumParams::new(0.8, 0.5, 0.9).expect("valid")),
        VariantConfig::Adam(AdamMomentumParams::new(0.7, 0.8, 0.9, 1e-6).expect("valid")),
    ];
    for (vi, variant) in variants.into_iter().enumerate() {
        let mut rng = Rng::new(seed ^ 0x77 ^ (vi as u64) << 8);
        let cfg = ModelConfig {
            in_channels: 6,
            d_model: 6,
            n_layers: 2,
            state_dim: 4,
            classes: 3,
            dropout: 0.0,
            variant,
            readout: Readout::MeanPool,
            freeze_variant: false,
            delta_init: (1e-2, 1e-1),
            scan_mode: ScanMode::Sequential,
        };
        let model = Model::new(cfg, &mut rng);
        let x = RealSeq::new(8, 6, (0..48).map(|_| rng.normal()).collect()).expect("finite");
        let template = model.clone();
        let loss_fn = |params: &[f64]| -> f64 {
            let mut m = template.clone();
            m.set_params(params);
            let (logits, _) = m.forward(&x, Mode::Train, &mut Rng::new(0)).expect("forward");
            cross_entropy(&logits, 1).expect("loss").0
        };
        let (logits, cache) = model.forward(&x, Mode::Train, &mut Rng::new(0)).expect("forward");
        let (_, d_logits) = cross_entropy(&logits, 1).expect("loss");
        let (grads, _) = model.backward(&cache, &d_logits).expect("backward");
        let check = crate::gradient_lab::gradcheck(
            loss_fn,
            &model.params(),
            &grads.flatten(false),
            1e-8,
        )
        .expect("gradcheck");
        worst = worst.max(check.max_rel_err);
    }
    CheckResult { name: "gradcheck", cases: 4, worst, tol: 1e-4, pass: worst <= 1e-4 }
}

pub fn cmd_check(cfg: &RunConfig) -> Result<i32> {
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let seed = cfg.u64("seed")?;
    let mut csv = String::from("check,cases,worst_error,tolerance,pass\n");
    let mut all_pass = true;
    for prop in cfg.str_list("props") {
        let result = match prop.as_str() {
            "inverse" => check_inverse(seed),
            "stability" => check_stability(seed),
            "affine" => check_affine(seed),
            "jacobian" => check_jacobian(seed),
            "adam_bound" => check_adam_bound(seed),
            "impulse" => check_impulse(seed),
            "gradcheck" => check_gradcheck(seed),
            other => return Err(Error::Config(format!("unknown check '{other}'"))),
        };
        all_pass &= result.pass;
        let line = format!(
            "{},{},{:.6e},{:.1e},{}\n",
            result.name, result.cases, result.worst, result.tol, result.pass
        );
        print!("{line}");
        csv.push_str(&line);
    }
    fs::write(out_dir.join("check_report.csv"), &csv)?;
    cfg.write_echo(&out_dir)?;
    Ok(if all_pass { 0 } else { 1 })
}

// ───────────────────────── gradflow ─────────────────────────

pub const GRADFLOW_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "42"),
    ("out", "out"),
    ("config", ""),
    ("variant", "vanilla"),
    ("seq-len", "128"),
    ("epochs", "3"),
    ("alpha", "0.6"),
    ("beta", "0.99"),
    ("d-model", "12"),
    ("state-dim", "8"),
    ("n-layers", "2"),
    ("classes", "4"),
    ("train-windows", "64"),
    ("delay", "auto"),
    ("noise", "1.0"),
    ("lr", "1e-3"),
    ("batch", "16"),
    ("delta-lo", "0.1"),
    ("delta-hi", "0.3"),
];

fn resolve_delay(cfg: &mut RunConfig, seq_len: usize) -> Result<usize> {
    if cfg.str("delay") == "auto" {
        let delay = seq_len * 3 / 4;
        cfg.set("delay", delay.to_string());
    }
    cfg.usize("delay")
}

pub fn cmd_gradflow(cfg: &mut RunConfig) -> Result<i32> {
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let seq_len = cfg.usize("seq-len")?;
    let delay = resolve_delay(cfg, seq_len)?;
    let variant_name = cfg.str("variant").to_string();
    let variant = match variant_name.as_str() {
        "vanilla" => GradFlowVariant::Vanilla,
        "momentum" => {
            GradFlowVariant::Momentum { alpha: cfg.f64("alpha")?, beta: cfg.f64("beta")? }
        }
        other => return Err(Error::Config(format!("gradflow variant must be vanilla|momentum, got '{other}'"))),
    };
    let gf = GradFlowConfig {
        variant,
        seq_len,
        epochs: cfg.usize("epochs")?,
        seed: cfg.u64("seed")?,
        d_model: cfg.usize("d-model")?,
        state_dim: cfg.usize("state-dim")?,
        n_layers: cfg.usize("n-layers")?,
        classes: cfg.usize("classes")?,
        delta_init: (cfg.f64("delta-lo")?, cfg.f64("delta-hi")?),
        train_windows: cfg.usize("train-windows")?,
        delay,
        noise: cfg.f64("noise")?,
        lr: cfg.f64("lr")?,
        batch: cfg.usize("batch")?,
    };
    let report = gradient_heatmap(&gf)?;
    fs::write(out_dir.join(format!("gradflow_{variant_name}.csv")), report.to_csv())?;
    let ratio = report.first_to_last_ratio();
    let summary = format!(
        "variant={variant_name} L={seq_len} epochs={} first_to_last_ratio={ratio:.6e}\n",
        gf.epochs
    );
    fs::write(out_dir.join(format!("gradflow_{variant_name}_summary.txt")), &summary)?;
    print!("{summary}");
    cfg.write_echo(&out_dir)?;
    Ok(0)
}

// ───────────────────────── train ─────────────────────────

pub const TRAIN_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("config", ""),
    ("task", "delayed-recall"),
    ("data", ""),
    ("val-data", ""),
    ("seq-len", "64"),
    ("delay", "auto"),
    ("classes", "4"),
    ("train-count", "96"),
    ("val-count", "32"),
    ("noise", "1.0"),
    ("variant", "momentum"),
    ("d-model", "16"),
    ("n-layers", "2"),
    ("state-dim", "8"),
    ("dropout", "0.1"),
    ("alpha", "0.6"),
    ("beta", "0.9"),
    ("rho", "0.9"),
    ("phase", "0.0"),
    ("gamma-var", "0.99"),
    ("eps-var", "1e-8"),
    ("lr", "1e-3"),
    ("weight-decay", "1e-4"),
    ("batch", "16"),
    ("max-epochs", "50"),
    ("patience", "10"),
    ("clip-norm", "1.0"),
    ("window-length", "512"),
    ("overlap", "0.5"),
];

fn variant_from_cfg(cfg: &RunConfig) -> Result<VariantConfig> {
    Ok(match cfg.str("variant") {
        "vanilla" => VariantConfig::Vanilla,
        "momentum" => VariantConfig::Momentum(MomentumParams::from_values(
            cfg.f64("alpha")?,
            cfg.f64("beta")?,
        )),
        "complex" => VariantConfig::Complex(ComplexMomentumParams::new(
            cfg.f64("rho")?,
            cfg.f64("phase")?,
            cfg.f64("alpha")?,
        )?),
        "adam" => VariantConfig::Adam(AdamMomentumParams::new(
            cfg.f64("alpha")?,
            cfg.f64("beta")?,
            cfg.f64("gamma-var")?,
            cfg.f64("eps-var")?,
        )?),
        other => return Err(Error::Config(format!("unknown variant '{other}'"))),
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        lr: cfg.f64("lr")?,
        weight_decay: cfg.f64("weight-decay")?,
        batch: cfg.usize("batch")?,
        max_epochs: cfg.usize("max-epochs")?,
        patience: cfg.usize("patience")?,
        clip_norm: cfg.f64("clip-norm")?,
        seed: cfg.u64("seed")?,
    })
}

/// Parse the dataset CSV layout: columns `t,ax,ay,az,gx,gy,gz,label_id`,
/// contiguous per-recording blocks separated by `# recording <id>` lines.
/// Returns one (stream, per-sample labels) pair per recording.
pub fn read_imu_csv(path: &Path) -> Result<Vec<(RealSeq, Vec<usize>)>> {
    let text = fs::read_to_string(path)?;
    let mut recordings: Vec<(Vec<f64>, Vec<usize>)> = vec![(Vec::new(), Vec::new())];
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if rest.trim_start().starts_with("recording")
                && !recordings.last().unwrap().0.is_empty()
            {
                recordings.push((Vec::new(), Vec::new()));
            }
            continue;
        }
        if line.starts_with('t') {
            continue; // header row
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected 8 columns (t,6 channels,label_id), got {}", fields.len()),
            });
        }
        let block = recordings.last_mut().unwrap();
        for f in &fields[1..7] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: ln + 1,
                msg: format!("bad channel value '{f}'"),
            })?;
            block.0.push(v);
        }
        let label: usize = fields[7].parse().map_err(|_| Error::Parse {
            line: ln + 1,
            msg: format!("bad label_id '{}'", fields[7]),
        })?;
        block.1.push(label);
    }
    recordings
        .into_iter()
        .filter(|(data, _)| !data.is_empty())
        .map(|(data, labels)| {
            let len = labels.len();
            Ok((RealSeq::new(len, 6, data)?, labels))
        })
        .collect()
}

/// Windows + majority-vote labels from parsed recordings.
fn windows_from_recordings(
    recordings: &[(RealSeq, Vec<usize>)],
    wc: &WindowConfig,
) -> Result<(Vec<RealSeq>, Vec<usize>)> {
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let stride = wc.stride();
    for (stream, sample_labels) in recordings {
        if stream.len() < wc.length {
            continue; // recordings shorter than one window contribute nothing
        }
        for (k, w) in window_stream(stream, wc)?.into_iter().enumerate() {
            let start = k * stride;
            let mut counts = std::collections::BTreeMap::new();
            for &l in &sample_labels[start..start + wc.length] {
                *counts.entry(l).or_insert(0usize) += 1;
            }
            let label = counts.into_iter().max_by_key(|&(_, c)| c).map(|(l, _)| l).unwrap_or(0);
            windows.push(w);
            labels.push(label);
        }
    }
    if windows.is_empty() {
        return Err(Error::TooShort { have: 0, need: wc.length });
    }
    Ok((windows, labels))
}

pub fn cmd_train(cfg: &mut RunConfig) -> Result<i32> {
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let seed = cfg.u64("seed")?;
    let mut rng = Rng::new(seed);
    let mut task_rng = rng.fork(0xDA7A);
    let mut model_rng = rng.fork(0x0DE1);

    let (train_data, val_data) = if cfg.str("data").is_empty() {
        let seq_len = cfg.usize("seq-len")?;
        let delay = resolve_delay(cfg, seq_len)?;
        let classes = cfg.usize("classes")?;
        let noise = cfg.f64("noise")?;
        let train = make_delayed_recall(
            &mut task_rng,
            seq_len,
            delay,
            classes,
            cfg.usize("train-count")?,
            noise,
        )?;
        let val =
            make_delayed_recall(&mut task_rng, seq_len, delay, classes, cfg.usize("val-count")?, noise)?;
        (train, val)
    } else {
        let wc = WindowConfig {
            length: cfg.usize("window-length")?,
            overlap: cfg.f64("overlap")?,
            channels: 6,
        };
        let train_rec = read_imu_csv(Path::new(cfg.str("data")))?;
        let val_path = cfg.str("val-data");
        if val_path.is_empty() {
            return Err(Error::Config("--val-data is required with --data".into()));
        }
        let val_rec = read_imu_csv(Path::new(val_path))?;
        let (mut train_w, train_l) = windows_from_recordings(&train_rec, &wc)?;
        let (mut val_w, val_l) = windows_from_recordings(&val_rec, &wc)?;
        let stats = ChannelStats::from_windows(&train_w)?;
        fs::write(out_dir.join("stats.csv"), stats.to_csv())?;
        for w in train_w.iter_mut().chain(val_w.iter_mut()) {
            zscore(w, &stats);
        }
        let classes = train_l.iter().chain(&val_l).max().map(|m| m + 1).unwrap_or(1);
        cfg.set("classes", classes.to_string());
        (
            Dataset { windows: train_w, labels: train_l, classes },
            Dataset { windows: val_w, labels: val_l, classes },
        )
    };

    let model_cfg = ModelConfig {
        in_channels: 6,
        d_model: cfg.usize("d-model")?,
        n_layers: cfg.usize("n-layers")?,
        state_dim: cfg.usize("state-dim")?,
        classes: train_data.classes,
        dropout: cfg.f64("dropout")?,
        variant: variant_from_cfg(cfg)?,
        readout: Readout::MeanPool,
        freeze_variant: false,
        delta_init: (1e-3, 1e-1),
        scan_mode: ScanMode::Parallel,
    };
    let mut model = Model::new(model_cfg, &mut model_rng);
    let tc = train_config(cfg)?;
    let history = train(&mut model, &train_data, &val_data, &tc)?;
    fs::write(out_dir.join("metrics.csv"), metrics_csv(&history))?;
    save_checkpoint(&model, &out_dir.join("model.ckpt"))?;
    let (final_loss, final_acc) = evaluate(&model, &val_data)?;
    println!(
        "trained {} epochs; final val_loss={final_loss:.6} val_acc={final_acc:.4}",
        history.len()
    );
    cfg.write_echo(&out_dir)?;
    Ok(0)
}

// ───────────────────────── sweep ─────────────────────────

pub const SWEEP_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "out"),
    ("config", ""),
    ("beta-grid", "0.0,0.1,0.3,0.6,0.9,0.99,0.999"),
    ("alpha-grid", "0.0,0.1,0.3,0.6,0.9,1.0,2.0"),
    ("seq-len", "32"),
    ("delay", "auto"),
    ("classes", "4"),
    ("train-count", "64"),
    ("val-count", "32"),
    ("noise", "1.0"),
    ("d-model", "8"),
    ("n-layers", "1"),
    ("state-dim", "4"),
    ("dropout", "0.0"),
    ("lr", "1e-3"),
    ("weight-decay", "1e-4"),
    ("batch", "16"),
    ("max-epochs", "5"),
    ("patience", "10"),
    ("clip-norm", "1.0"),
];

pub fn cmd_sweep(cfg: &mut RunConfig) -> Result<i32> {
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let seed = cfg.u64("seed")?;
    let mut rng = Rng::new(seed);
    let mut task_rng = rng.fork(0xDA7A);
    let seq_len = cfg.usize("seq-len")?;
    let delay = resolve_delay(cfg, seq_len)?;
    let classes = cfg.usize("classes")?;
    let noise = cfg.f64("noise")?;
    let train_data = make_delayed_recall(
        &mut task_rng,
        seq_len,
        delay,
        classes,
        cfg.usize("train-count")?,
        noise,
    )?;
    let val_data =
        make_delayed_recall(&mut task_rng, seq_len, delay, classes, cfg.usize("val-count")?, noise)?;

    let beta_grid = cfg.f64_list("beta-grid")?;
    let alpha_grid = cfg.f64_list("alpha-grid")?;
    let base_cfg = ModelConfig {
        in_channels: 6,
        d_model: cfg.usize("d-model")?,
        n_layers: cfg.usize("n-layers")?,
        state_dim: cfg.usize("state-dim")?,
        classes,
        dropout: cfg.f64("dropout")?,
        variant: VariantConfig::Momentum(MomentumParams::default()),
        readout: Readout::MeanPool,
        freeze_variant: true,
        delta_init: (1e-3, 1e-1),
        scan_mode: ScanMode::Parallel,
    };
    let tc = train_config(cfg)?;
    let matrix = grid_search(&beta_grid, &alpha_grid, &train_data, &val_data, &base_cfg, &tc)?;
    let csv = sweep_csv(&beta_grid, &alpha_grid, &matrix);
    fs::write(out_dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    cfg.write_echo(&out_dir)?;
    Ok(0)
}
