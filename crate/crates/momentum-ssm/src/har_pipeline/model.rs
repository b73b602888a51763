//! The window classifier: conv front-end, stacked SSM blocks (pre-norm,
//! residual: u + SSM(LN(u))), temporal pooling, linear head.
//!
//! Parameters flatten into one contiguous vector in a fixed named order
//! (see [`Model::param_specs`]); the trainer, the finite-difference
//! harness, and the checkpoint format all operate on that vector, so the
//! three stay consistent by construction.

use crate::error::{Error, Result};
use crate::momentum_variants::{
    adam_backward, adam_forward_mode, complex_backward, complex_forward_mode, momentum_backward,
    momentum_forward_mode, AdamCache, AdamGrads, AdamMomentumParams, ComplexCache, ComplexGrads,
    ComplexMomentumParams, MomentumCache, MomentumGrads, MomentumParams,
};
use crate::numkit::{RealSeq, Rng};
use crate::selective_ssm::{
    ssm_backward, ssm_forward_mode, SelectiveParams, SsmCache, SsmGrads,
};
use crate::affine_scan::ScanMode;

use super::conv::{ConvCache, ConvFrontEnd, ConvGrads, Mode};

const LN_EPS: f64 = 1e-5;

// ───────────────────────── configuration ─────────────────────────

/// Which recurrence the blocks run, with initial coefficient values.
#[derive(Clone, Copy, Debug)]
pub enum VariantConfig {
    Vanilla,
    Momentum(MomentumParams),
    Complex(ComplexMomentumParams),
    Adam(AdamMomentumParams),
}

impl VariantConfig {
    pub fn name(&self) -> &'static str {
        match self {
            VariantConfig::Vanilla => "vanilla",
            VariantConfig::Momentum(_) => "momentum",
            VariantConfig::Complex(_) => "complex",
            VariantConfig::Adam(_) => "adam",
        }
    }
}

/// How the per-step features collapse into one vector for the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readout {
    /// Average along the temporal dimension (the classification default).
    MeanPool,
    /// Take the final step (used by the gradient-flow experiments, where
    /// direct per-step head contributions would mask the through-time
    /// decay being measured).
    LastStep,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub state_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub variant: VariantConfig,
    pub readout: Readout,
    /// Keep momentum coefficients out of the trainable vector (used by
    /// hyperparameter sweeps, which pin them per cell).
    pub freeze_variant: bool,
    /// softplus(theta) initialization range of the step-size bias.
    pub delta_init: (f64, f64),
    /// Scan strategy of the block recurrences.
    pub scan_mode: ScanMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 6,
            d_model: 128,
            n_layers: 2,
            state_dim: 64,
            classes: 12,
            dropout: 0.1,
            variant: VariantConfig::Momentum(MomentumParams::default()),
            readout: Readout::MeanPool,
            freeze_variant: false,
            delta_init: (1e-3, 1e-1),
            scan_mode: ScanMode::Parallel,
        }
    }
}

// ───────────────────────── layers ─────────────────────────

/// Per-feature layer normalization with learnable gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    /// Per-step reciprocal standard deviations.
    inv_std: Vec<f64>,
    /// Normalized pre-gain activations x_hat.
    normed: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gain: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    pub fn forward(&self, x: &RealSeq) -> (RealSeq, LnCache) {
        let (len, d) = (x.len(), x.channels());
        let mut out = RealSeq::zeros(len, d);
        let mut inv_std = Vec::with_capacity(len);
        let mut normed = vec![0.0; len * d];
        for t in 0..len {
            let row = x.row(t);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let orow = out.row_mut(t);
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                normed[t * d + c] = xh;
                orow[c] = self.gain[c] * xh + self.bias[c];
            }
        }
        (out, LnCache { inv_std, normed })
    }

    pub fn backward(
        &self,
        cache: &LnCache,
        grad_out: &RealSeq,
    ) -> (Vec<f64>, Vec<f64>, RealSeq) {
        let (len, d) = (grad_out.len(), grad_out.channels());
        let mut d_gain = vec![0.0; d];
        let mut d_bias = vec![0.0; d];
        let mut d_x = RealSeq::zeros(len, d);
        for t in 0..len {
            let g = grad_out.row(t);
            let xh = &cache.normed[t * d..(t + 1) * d];
            let mut sum_gg = 0.0;
            let mut sum_ggx = 0.0;
            for c in 0..d {
                d_gain[c] += g[c] * xh[c];
                d_bias[c] += g[c];
                let gg = g[c] * self.gain[c];
                sum_gg += gg;
                sum_ggx += gg * xh[c];
            }
            let inv_n = 1.0 / d as f64;
            let row = d_x.row_mut(t);
            for c in 0..d {
                let gg = g[c] * self.gain[c];
                row[c] = cache.inv_std[t] * (gg - inv_n * sum_gg - xh[c] * inv_n * sum_ggx);
            }
        }
        (d_gain, d_bias, d_x)
    }
}

/// One backbone block: pre-norm, SSM recurrence, residual add.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm: LayerNorm,
    pub ssm: SelectiveParams,
    pub variant: VariantConfig,
}

/// Linear classification head on the pooled features.
#[derive(Clone, Debug)]
pub struct Head {
    /// classes x d_model.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub conv: ConvFrontEnd,
    pub blocks: Vec<Block>,
    pub head: Head,
}

// ───────────────────────── caches & grads ─────────────────────────

#[derive(Clone, Debug)]
pub enum VariantCache {
    Vanilla(SsmCache),
    Momentum(MomentumCache),
    Complex(ComplexCache),
    Adam(AdamCache),
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln: LnCache,
    ssm: VariantCache,
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    pub conv: ConvCache,
    blocks: Vec<BlockCache>,
    /// Features entering the pooling stage.
    pooled_input: RealSeq,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub enum VariantGrads {
    #[default]
    Vanilla,
    Momentum(MomentumGrads),
    Complex(ComplexGrads),
    Adam(AdamGrads),
}

#[derive(Clone, Debug)]
pub struct BlockGrads {
    pub norm_gain: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub ssm: SsmGrads,
    pub variant: VariantGrads,
}

#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub conv: ConvGrads,
    pub blocks: Vec<BlockGrads>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

// ───────────────────────── model ─────────────────────────

impl Model {
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Self {
        let conv = ConvFrontEnd::new(cfg.in_channels, cfg.d_model, cfg.dropout, rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                norm: LayerNorm::new(cfg.d_model),
                ssm: SelectiveParams::init_with_delta_range(
                    cfg.d_model,
                    cfg.state_dim,
                    cfg.delta_init.0,
                    cfg.delta_init.1,
                    rng,
                ),
                variant: cfg.variant,
            })
            .collect();
        let head_scale = 1.0 / (cfg.d_model as f64).sqrt();
        let head = Head {
            weight: (0..cfg.classes * cfg.d_model).map(|_| rng.normal() * head_scale).collect(),
            bias: vec![0.0; cfg.classes],
        };
        Model { cfg, conv, blocks, head }
    }

    /// Class logits for one window plus every intermediate the backward
    /// pass needs. Pure in `self`; deterministic given the rng.
    pub fn forward(
        &self,
        window: &RealSeq,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, ModelCache)> {
        let (features, conv_cache) = self.conv.forward(window, mode, rng)?;
        self.forward_from_features(features, conv_cache)
    }

    /// Blocks, pooling, and head on already-computed conv features (the
    /// only stochastic stage, dropout, lives in the conv front-end).
    fn forward_from_features(
        &self,
        features: RealSeq,
        conv_cache: ConvCache,
    ) -> Result<(Vec<f64>, ModelCache)> {
        let mut u = features;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (normed, ln_cache) = block.norm.forward(&u);
            let (y, var_cache) = match &block.variant {
                VariantConfig::Vanilla => {
                    let (y, c) = ssm_forward_mode(&block.ssm, &normed, self.cfg.scan_mode)?;
                    (y, VariantCache::Vanilla(c))
                }
                VariantConfig::Momentum(mp) => {
                    let (y, c) = momentum_forward_mode(&block.ssm, mp, &normed, self.cfg.scan_mode)?;
                    (y, VariantCache::Momentum(c))
                }
                VariantConfig::Complex(cp) => {
                    let (y, c) = complex_forward_mode(&block.ssm, cp, &normed, self.cfg.scan_mode)?;
                    (y, VariantCache::Complex(c))
                }
                VariantConfig::Adam(ap) => {
                    let (y, c) = adam_forward_mode(&block.ssm, ap, &normed, self.cfg.scan_mode)?;
                    (y, VariantCache::Adam(c))
                }
            };
            let mut out = u.clone();
            for i in 0..out.data().len() {
                out.data_mut()[i] += y.data()[i];
            }
            blocks.push(BlockCache { ln: ln_cache, ssm: var_cache });
            u = out;
        }

        let d = self.cfg.d_model;
        let pooled: Vec<f64> = match self.cfg.readout {
            Readout::MeanPool => {
                let mut acc = vec![0.0; d];
                for t in 0..u.len() {
                    for (a, &v) in acc.iter_mut().zip(u.row(t)) {
                        *a += v;
                    }
                }
                acc.iter().map(|v| v / u.len() as f64).collect()
            }
            Readout::LastStep => u.row(u.len() - 1).to_vec(),
        };

        let logits: Vec<f64> = (0..self.cfg.classes)
            .map(|c| {
                self.head.bias[c]
                    + self.head.weight[c * d..(c + 1) * d]
                        .iter()
                        .zip(&pooled)
                        .map(|(w, p)| w * p)
                        .sum::<f64>()
            })
            .collect();

        Ok((logits.clone(), ModelCache { conv: conv_cache, blocks, pooled_input: u, pooled, logits }))
    }

    /// Reverse pass. Returns parameter gradients and the per-time-step
    /// recurrent-state gradient norms of the LAST block, the quantity the
    /// gradient-flow reports plot.
    pub fn backward(
        &self,
        cache: &ModelCache,
        d_logits: &[f64],
    ) -> Result<(ModelGrads, Vec<f64>)> {
        let (blocks, head_weight, head_bias, d_features, norms) =
            self.backward_above_conv(cache, d_logits)?;
        let (conv, _d_window) = self.conv.backward(&cache.conv, &d_features)?;
        Ok((ModelGrads { conv, blocks, head_weight, head_bias }, norms))
    }

    /// Everything above the conv front-end: head, pooling, blocks. The
    /// returned gradient with respect to the conv features lets batched
    /// callers finish with a pooled-statistics conv backward.
    #[allow(clippy::type_complexity)]
    fn backward_above_conv(
        &self,
        cache: &ModelCache,
        d_logits: &[f64],
    ) -> Result<(Vec<BlockGrads>, Vec<f64>, Vec<f64>, RealSeq, Vec<f64>)> {
        let d = self.cfg.d_model;
        let len = cache.pooled_input.len();

        let mut head_weight = vec![0.0; self.head.weight.len()];
        let mut d_pooled = vec![0.0; d];
        for c in 0..self.cfg.classes {
            for f in 0..d {
                head_weight[c * d + f] = d_logits[c] * cache.pooled[f];
                d_pooled[f] += d_logits[c] * self.head.weight[c * d + f];
            }
        }
        let head_bias = d_logits.to_vec();

        let mut d_u = RealSeq::zeros(len, d);
        match self.cfg.readout {
            Readout::MeanPool => {
                let inv = 1.0 / len as f64;
                for t in 0..len {
                    let row = d_u.row_mut(t);
                    for f in 0..d {
                        row[f] = d_pooled[f] * inv;
                    }
                }
            }
            Readout::LastStep => {
                d_u.row_mut(len - 1).copy_from_slice(&d_pooled);
            }
        }

        let mut block_grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        let mut last_state_norms = Vec::new();
        for (li, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            // residual: d_out feeds both the ssm branch and the skip
            let (ssm_grads, variant, d_normed, norms) = match (&block.variant, &bc.ssm) {
                (VariantConfig::Vanilla, VariantCache::Vanilla(c)) => {
                    let out = ssm_backward(&block.ssm, c, &d_u)?;
                    (out.grads, VariantGrads::Vanilla, out.grad_x, out.state_norms)
                }
                (VariantConfig::Momentum(mp), VariantCache::Momentum(c)) => {
                    let out = momentum_backward(&block.ssm, mp, c, &d_u)?;
                    (out.grads, VariantGrads::Momentum(out.variant_grads), out.grad_x, out.state_norms)
                }
                (VariantConfig::Complex(cp), VariantCache::Complex(c)) => {
                    let out = complex_backward(&block.ssm, cp, c, &d_u)?;
                    (out.grads, VariantGrads::Complex(out.variant_grads), out.grad_x, out.state_norms)
                }
                (VariantConfig::Adam(ap), VariantCache::Adam(c)) => {
                    let out = adam_backward(&block.ssm, ap, c, &d_u)?;
                    (out.grads, VariantGrads::Adam(out.variant_grads), out.grad_x, out.state_norms)
                }
                _ => return Err(Error::CacheMismatch { what: "block variant kind" }),
            };
            if li == self.blocks.len() - 1 {
                last_state_norms = norms;
            }
            let (norm_gain, norm_bias, d_from_ln) = block.norm.backward(&bc.ln, &d_normed);
            for i in 0..d_u.data().len() {
                d_u.data_mut()[i] += d_from_ln.data()[i];
            }
            block_grads.push(BlockGrads { norm_gain, norm_bias, ssm: ssm_grads, variant });
        }
        block_grads.reverse();
        Ok((block_grads, head_weight, head_bias, d_u, last_state_norms))
    }

    /// Mini-batch forward: conv normalization statistics pool over the
    /// whole batch in train mode (see [`ConvFrontEnd::forward_batch`]);
    /// the rest of the network processes windows independently. One
    /// dropout seed per window keeps the result independent of execution
    /// order.
    pub fn forward_batch(
        &self,
        windows: &[&RealSeq],
        mode: Mode,
        seeds: &[u64],
    ) -> Result<Vec<(Vec<f64>, ModelCache)>> {
        use rayon::prelude::*;
        let conv_out = self.conv.forward_batch(windows, mode, seeds)?;
        conv_out
            .into_par_iter()
            .map(|(features, conv_cache)| self.forward_from_features(features, conv_cache))
            .collect()
    }

    /// Gradient of a summed batch objective: per-window adjoints run
    /// independently down to the conv features, then the pooled-statistics
    /// conv backward couples them. Returns the summed gradients.
    pub fn backward_batch(
        &self,
        caches: &[ModelCache],
        d_logits: &[Vec<f64>],
    ) -> Result<ModelGrads> {
        if caches.is_empty() || caches.len() != d_logits.len() {
            return Err(Error::CacheMismatch { what: "batch backward sizes" });
        }
        use rayon::prelude::*;
        let partials: Vec<(Vec<BlockGrads>, Vec<f64>, Vec<f64>, RealSeq, Vec<f64>)> = caches
            .par_iter()
            .zip(d_logits.par_iter())
            .map(|(cache, dl)| self.backward_above_conv(cache, dl))
            .collect::<Result<_>>()?;
        // accumulate in batch order so the sum is deterministic
        let mut total: Option<ModelGrads> = None;
        let mut d_features_list = Vec::with_capacity(caches.len());
        for (blocks, head_weight, head_bias, d_features, _) in partials {
            d_features_list.push(d_features);
            let partial = ModelGrads {
                conv: ConvGrads {
                    weights: vec![0.0; self.conv.weights.len()],
                    bias: vec![0.0; self.conv.bias.len()],
                },
                blocks,
                head_weight,
                head_bias,
            };
            total = Some(match total {
                None => partial,
                Some(mut acc) => {
                    acc.add(&partial);
                    acc
                }
            });
        }
        let mut total = total.expect("nonempty batch");
        let conv_caches: Vec<ConvCache> = caches.iter().map(|c| c.conv.clone()).collect();
        let d_feature_refs: Vec<&RealSeq> = d_features_list.iter().collect();
        let (conv_grads, _) = self.conv.backward_batch(&conv_caches, &d_feature_refs)?;
        total.conv = conv_grads;
        Ok(total)
    }

    // ───────── parameter vector ─────────

    /// Named tensors in flattening order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let cfg = &self.cfg;
        let mut specs = vec![
            (
                "conv.weight".to_string(),
                vec![cfg.d_model, cfg.in_channels, self.conv.kernel],
            ),
            ("conv.bias".to_string(), vec![cfg.d_model]),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            specs.push((format!("{p}.norm.gain"), vec![cfg.d_model]));
            specs.push((format!("{p}.norm.bias"), vec![cfg.d_model]));
            specs.push((format!("{p}.ssm.a_log"), vec![cfg.d_model, cfg.state_dim]));
            specs.push((format!("{p}.ssm.w_b"), vec![cfg.state_dim, cfg.d_model]));
            specs.push((format!("{p}.ssm.w_c"), vec![cfg.state_dim, cfg.d_model]));
            specs.push((format!("{p}.ssm.w_delta"), vec![cfg.d_model]));
            specs.push((format!("{p}.ssm.theta_delta"), vec![cfg.d_model]));
            specs.push((format!("{p}.ssm.skip"), vec![cfg.d_model]));
            if !cfg.freeze_variant {
                match block.variant {
                    VariantConfig::Vanilla => {}
                    VariantConfig::Momentum(_) => {
                        specs.push((format!("{p}.momentum.alpha"), vec![1]));
                        specs.push((format!("{p}.momentum.beta_raw"), vec![1]));
                    }
                    VariantConfig::Complex(_) => {
                        specs.push((format!("{p}.complex.rho"), vec![1]));
                        specs.push((format!("{p}.complex.phase"), vec![1]));
                        specs.push((format!("{p}.complex.alpha"), vec![1]));
                    }
                    VariantConfig::Adam(_) => {
                        specs.push((format!("{p}.adam.alpha"), vec![1]));
                        specs.push((format!("{p}.adam.beta_raw"), vec![1]));
                        specs.push((format!("{p}.adam.gamma_raw"), vec![1]));
                    }
                }
            }
        }
        specs.push(("head.weight".to_string(), vec![cfg.classes, cfg.d_model]));
        specs.push(("head.bias".to_string(), vec![cfg.classes]));
        specs
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Flatten all trainable parameters in [`Model::param_specs`] order.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(&self.conv.weights);
        v.extend(&self.conv.bias);
        for block in &self.blocks {
            v.extend(&block.norm.gain);
            v.extend(&block.norm.bias);
            v.extend(&block.ssm.a_log);
            v.extend(&block.ssm.w_b);
            v.extend(&block.ssm.w_c);
            v.extend(&block.ssm.w_delta);
            v.extend(&block.ssm.theta_delta);
            v.extend(&block.ssm.skip);
            if !self.cfg.freeze_variant {
                match &block.variant {
                    VariantConfig::Vanilla => {}
                    VariantConfig::Momentum(mp) => {
                        v.push(mp.alpha);
                        v.push(mp.beta_raw);
                    }
                    VariantConfig::Complex(cp) => {
                        v.push(cp.rho);
                        v.push(cp.phase);
                        v.push(cp.alpha);
                    }
                    VariantConfig::Adam(ap) => {
                        v.push(ap.alpha);
                        v.push(ap.beta_raw);
                        v.push(ap.gamma_raw);
                    }
                }
            }
        }
        v.extend(&self.head.weight);
        v.extend(&self.head.bias);
        v
    }

    /// Inverse of [`Model::params`].
    pub fn set_params(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_params(), "parameter vector length");
        let mut k = 0;
        let take = |dst: &mut [f64], k: &mut usize| {
            dst.copy_from_slice(&v[*k..*k + dst.len()]);
            *k += dst.len();
        };
        take(&mut self.conv.weights, &mut k);
        take(&mut self.conv.bias, &mut k);
        let freeze = self.cfg.freeze_variant;
        for block in self.blocks.iter_mut() {
            take(&mut block.norm.gain, &mut k);
            take(&mut block.norm.bias, &mut k);
            take(&mut block.ssm.a_log, &mut k);
            take(&mut block.ssm.w_b, &mut k);
            take(&mut block.ssm.w_c, &mut k);
            take(&mut block.ssm.w_delta, &mut k);
            take(&mut block.ssm.theta_delta, &mut k);
            take(&mut block.ssm.skip, &mut k);
            if !freeze {
                match &mut block.variant {
                    VariantConfig::Vanilla => {}
                    VariantConfig::Momentum(mp) => {
                        mp.alpha = v[k];
                        mp.beta_raw = v[k + 1];
                        k += 2;
                    }
                    VariantConfig::Complex(cp) => {
                        cp.rho = v[k];
                        cp.phase = v[k + 1];
                        cp.alpha = v[k + 2];
                        k += 3;
                    }
                    VariantConfig::Adam(ap) => {
                        ap.alpha = v[k];
                        ap.beta_raw = v[k + 1];
                        ap.gamma_raw = v[k + 2];
                        k += 3;
                    }
                }
            }
        }
        take(&mut self.head.weight, &mut k);
        take(&mut self.head.bias, &mut k);
        debug_assert_eq!(k, v.len());
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

impl ModelGrads {
    /// Elementwise accumulate (same architecture).
    pub fn add(&mut self, other: &ModelGrads) {
        add_into(&mut self.conv.weights, &other.conv.weights);
        add_into(&mut self.conv.bias, &other.conv.bias);
        add_into(&mut self.head_weight, &other.head_weight);
        add_into(&mut self.head_bias, &other.head_bias);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            add_into(&mut a.norm_gain, &b.norm_gain);
            add_into(&mut a.norm_bias, &b.norm_bias);
            add_into(&mut a.ssm.a_log, &b.ssm.a_log);
            add_into(&mut a.ssm.w_b, &b.ssm.w_b);
            add_into(&mut a.ssm.w_c, &b.ssm.w_c);
            add_into(&mut a.ssm.w_delta, &b.ssm.w_delta);
            add_into(&mut a.ssm.theta_delta, &b.ssm.theta_delta);
            add_into(&mut a.ssm.skip, &b.ssm.skip);
            match (&mut a.variant, &b.variant) {
                (VariantGrads::Vanilla, VariantGrads::Vanilla) => {}
                (VariantGrads::Momentum(x), VariantGrads::Momentum(y)) => {
                    x.alpha += y.alpha;
                    x.beta_raw += y.beta_raw;
                }
                (VariantGrads::Complex(x), VariantGrads::Complex(y)) => {
                    x.rho += y.rho;
                    x.phase += y.phase;
                    x.alpha += y.alpha;
                }
                (VariantGrads::Adam(x), VariantGrads::Adam(y)) => {
                    x.alpha += y.alpha;
                    x.beta_raw += y.beta_raw;
                    x.gamma_raw += y.gamma_raw;
                }
                _ => unreachable!("mismatched variant gradients"),
            }
        }
    }

    /// Flatten in the same order as [`Model::params`].
    pub fn flatten(&self, freeze_variant: bool) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.conv.weights);
        v.extend(&self.conv.bias);
        for b in &self.blocks {
            v.extend(&b.norm_gain);
            v.extend(&b.norm_bias);
            v.extend(&b.ssm.a_log);
            v.extend(&b.ssm.w_b);
            v.extend(&b.ssm.w_c);
            v.extend(&b.ssm.w_delta);
            v.extend(&b.ssm.theta_delta);
            v.extend(&b.ssm.skip);
            if !freeze_variant {
                match &b.variant {
                    VariantGrads::Vanilla => {}
                    VariantGrads::Momentum(g) => {
                        v.push(g.alpha);
                        v.push(g.beta_raw);
                    }
                    VariantGrads::Complex(g) => {
                        v.push(g.rho);
                        v.push(g.phase);
                        v.push(g.alpha);
                    }
                    VariantGrads::Adam(g) => {
                        v.push(g.alpha);
                        v.push(g.beta_raw);
                        v.push(g.gamma_raw);
                    }
                }
            }
        }
        v.extend(&self.head_weight);
        v.extend(&self.head_bias);
        v
    }
}

// ───────────────────────── loss ─────────────────────────

/// Log-sum-exp stabilized categorical cross-entropy; the logit gradient
/// is softmax(logits) - onehot(label).
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - max).exp() / sum_exp).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
