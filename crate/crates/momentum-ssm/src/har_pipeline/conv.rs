//! Convolutional front-end: same-length 1D convolution (kernel 3, stride
//! 1, zero padding), batch normalization, ReLU, and inverted dropout.
//!
//! Train-mode normalization statistics are batch statistics: pooled over
//! (windows x time) when a mini-batch travels through
//! [`ConvFrontEnd::forward_batch`], or over the time axis alone for the
//! single-window [`ConvFrontEnd::forward`] (a batch of one). Running
//! estimates accumulate with momentum 0.1 and drive eval mode. Batch norm
//! carries no learnable affine pair — the scale/shift roles are covered
//! by the convolution weights and the downstream layer norms.

use crate::error::{Error, Result};
use crate::numkit::{RealSeq, Rng};

const BN_EPS: f64 = 1e-5;

/// Train mode uses batch statistics and applies dropout; eval mode uses
/// running statistics and no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Conv1D -> batch norm -> ReLU -> dropout front-end.
#[derive(Clone, Debug)]
pub struct ConvFrontEnd {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel width; odd so that zero padding of (kernel-1)/2 per side
    /// preserves length.
    pub kernel: usize,
    /// out x in x kernel, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub bn_momentum: f64,
    pub dropout_p: f64,
}

/// Forward intermediates needed by the backward pass and by running-stat
/// updates.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub input: RealSeq,
    /// L x out pre-normalization activations.
    pub pre: Vec<f64>,
    /// Statistics used for normalization in this pass (shared across the
    /// batch when the batched path produced the cache).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// L x out normalized activations (pre-ReLU).
    pub normed: Vec<f64>,
    /// L x out dropout scales (1/(1-p) kept, 0 dropped, 1 in eval).
    pub drop_scale: Vec<f64>,
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    fn zeros(fe: &ConvFrontEnd) -> Self {
        ConvGrads { weights: vec![0.0; fe.weights.len()], bias: vec![0.0; fe.out_channels] }
    }

    fn add(&mut self, other: &ConvGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl ConvFrontEnd {
    pub fn new(in_channels: usize, out_channels: usize, dropout_p: f64, rng: &mut Rng) -> Self {
        let kernel = 3;
        let scale = 1.0 / ((in_channels * kernel) as f64).sqrt();
        ConvFrontEnd {
            in_channels,
            out_channels,
            kernel,
            weights: (0..out_channels * in_channels * kernel)
                .map(|_| rng.normal() * scale)
                .collect(),
            bias: vec![0.0; out_channels],
            running_mean: vec![0.0; out_channels],
            running_var: vec![1.0; out_channels],
            bn_momentum: 0.1,
            dropout_p,
        }
    }

    /// Identity-like front-end for tests: center tap 1 on the diagonal,
    /// batch norm bypassed by neutral running stats in eval mode.
    pub fn identity(channels: usize) -> Self {
        let mut fe = ConvFrontEnd {
            in_channels: channels,
            out_channels: channels,
            kernel: 3,
            weights: vec![0.0; channels * channels * 3],
            bias: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            bn_momentum: 0.1,
            dropout_p: 0.0,
        };
        for c in 0..channels {
            fe.weights[(c * channels + c) * 3 + 1] = 1.0;
        }
        fe
    }

    /// The raw convolution: L x in -> flat L x out pre-activations.
    fn conv_pre(&self, window: &RealSeq) -> Result<Vec<f64>> {
        if window.channels() != self.in_channels {
            return Err(Error::WidthMismatch { expected: self.in_channels, got: window.channels() });
        }
        let len = window.len();
        let (ic, oc, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = (k - 1) / 2;
        let mut pre = vec![0.0; len * oc];
        for t in 0..len {
            for o in 0..oc {
                let mut acc = self.bias[o];
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let row = window.row(src as usize);
                    let wrow = &self.weights[(o * ic) * k..];
                    for c in 0..ic {
                        acc += wrow[c * k + kk] * row[c];
                    }
                }
                pre[t * oc + o] = acc;
            }
        }
        Ok(pre)
    }

    /// Normalize with the given statistics, then ReLU and dropout.
    fn finish(
        &self,
        window: &RealSeq,
        pre: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        mode: Mode,
        rng: &mut Rng,
    ) -> (RealSeq, ConvCache) {
        let len = window.len();
        let oc = self.out_channels;
        let mut normed = vec![0.0; len * oc];
        for t in 0..len {
            for o in 0..oc {
                normed[t * oc + o] = (pre[t * oc + o] - mean[o]) / (var[o] + BN_EPS).sqrt();
            }
        }
        let mut drop_scale = vec![1.0; len * oc];
        let mut out = RealSeq::zeros(len, oc);
        let keep = 1.0 - self.dropout_p;
        for t in 0..len {
            let row = out.row_mut(t);
            for o in 0..oc {
                let r = normed[t * oc + o].max(0.0);
                let scale = if mode == Mode::Train && self.dropout_p > 0.0 {
                    if rng.uniform() < self.dropout_p {
                        0.0
                    } else {
                        1.0 / keep
                    }
                } else {
                    1.0
                };
                drop_scale[t * oc + o] = scale;
                row[o] = r * scale;
            }
        }
        (out, ConvCache { input: window.clone(), pre, mean, var, normed, drop_scale, mode })
    }

    /// L x in -> L x out features for a single window (train-mode
    /// statistics over its own time axis). Pure: running statistics are
    /// NOT mutated here; apply [`ConvFrontEnd::update_running_stats`]
    /// during training.
    pub fn forward(
        &self,
        window: &RealSeq,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(RealSeq, ConvCache)> {
        let pre = self.conv_pre(window)?;
        let (mean, var) = match mode {
            Mode::Train => pooled_stats(&[&pre], self.out_channels),
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        Ok(self.finish(window, pre, mean, var, mode, rng))
    }

    /// Mini-batch forward: train-mode statistics pool over
    /// (windows x time), so no single window can be decoded from its own
    /// normalization; every cache carries the shared statistics.
    /// `seeds` supplies one dropout stream per window.
    pub fn forward_batch(
        &self,
        windows: &[&RealSeq],
        mode: Mode,
        seeds: &[u64],
    ) -> Result<Vec<(RealSeq, ConvCache)>> {
        if windows.len() != seeds.len() {
            return Err(Error::WidthMismatch { expected: windows.len(), got: seeds.len() });
        }
        use rayon::prelude::*;
        let pres: Vec<Vec<f64>> =
            windows.par_iter().map(|w| self.conv_pre(w)).collect::<Result<_>>()?;
        let (mean, var) = match mode {
            Mode::Train => {
                let refs: Vec<&[f64]> = pres.iter().map(|p| p.as_slice()).collect();
                pooled_stats(&refs, self.out_channels)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        Ok(windows
            .par_iter()
            .zip(pres.into_par_iter())
            .zip(seeds.par_iter())
            .map(|((w, pre), &seed)| {
                self.finish(w, pre, mean.clone(), var.clone(), mode, &mut Rng::new(seed))
            })
            .collect())
    }

    /// Fold batch statistics into the running estimates (once per batch).
    pub fn update_running_stats(&mut self, cache: &ConvCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.bn_momentum;
        for o in 0..self.out_channels {
            self.running_mean[o] = (1.0 - m) * self.running_mean[o] + m * cache.mean[o];
            self.running_var[o] = (1.0 - m) * self.running_var[o] + m * cache.var[o];
        }
    }

    /// Backward for a cache produced by the single-window path.
    pub fn backward(&self, cache: &ConvCache, grad_out: &RealSeq) -> Result<(ConvGrads, RealSeq)> {
        let (grads, mut d_inputs) =
            self.backward_batch(std::slice::from_ref(cache), &[grad_out])?;
        Ok((grads, d_inputs.pop().expect("one window")))
    }

    /// Backward through dropout, ReLU, normalization, and the
    /// convolution for a batch sharing normalization statistics. In train
    /// mode the statistics depend on every element of the pooled
    /// population, so gradients couple across windows; the reductions run
    /// over the whole batch.
    pub fn backward_batch(
        &self,
        caches: &[ConvCache],
        grad_outs: &[&RealSeq],
    ) -> Result<(ConvGrads, Vec<RealSeq>)> {
        if caches.is_empty() || caches.len() != grad_outs.len() {
            return Err(Error::CacheMismatch { what: "conv batch sizes" });
        }
        let oc = self.out_channels;
        let mode = caches[0].mode;

        // through dropout and ReLU, per window
        let mut d_normed: Vec<Vec<f64>> = Vec::with_capacity(caches.len());
        for (cache, grad_out) in caches.iter().zip(grad_outs) {
            let len = cache.input.len();
            if grad_out.len() != len || grad_out.channels() != oc {
                return Err(Error::CacheMismatch { what: "conv front-end shapes" });
            }
            let mut dn = vec![0.0; len * oc];
            for t in 0..len {
                let g = grad_out.row(t);
                for o in 0..oc {
                    let idx = t * oc + o;
                    if cache.normed[idx] > 0.0 {
                        dn[idx] = g[o] * cache.drop_scale[idx];
                    }
                }
            }
            d_normed.push(dn);
        }

        // through normalization
        let mut d_pre: Vec<Vec<f64>> = Vec::with_capacity(caches.len());
        match mode {
            Mode::Train => {
                // pooled batch-norm backward over all windows and steps
                let total: usize = caches.iter().map(|c| c.input.len()).sum();
                let inv_n = 1.0 / total as f64;
                let mut sum_g = vec![0.0; oc];
                let mut sum_gx = vec![0.0; oc];
                for (cache, dn) in caches.iter().zip(&d_normed) {
                    for t in 0..cache.input.len() {
                        for o in 0..oc {
                            let idx = t * oc + o;
                            sum_g[o] += dn[idx];
                            sum_gx[o] += dn[idx] * cache.normed[idx];
                        }
                    }
                }
                for (cache, dn) in caches.iter().zip(&d_normed) {
                    let inv_std: Vec<f64> =
                        (0..oc).map(|o| 1.0 / (cache.var[o] + BN_EPS).sqrt()).collect();
                    let mut dp = vec![0.0; dn.len()];
                    for t in 0..cache.input.len() {
                        for o in 0..oc {
                            let idx = t * oc + o;
                            dp[idx] = inv_std[o]
                                * (dn[idx]
                                    - inv_n * sum_g[o]
                                    - cache.normed[idx] * inv_n * sum_gx[o]);
                        }
                    }
                    d_pre.push(dp);
                }
            }
            Mode::Eval => {
                for (cache, dn) in caches.iter().zip(&d_normed) {
                    let inv_std: Vec<f64> =
                        (0..oc).map(|o| 1.0 / (cache.var[o] + BN_EPS).sqrt()).collect();
                    let mut dp = vec![0.0; dn.len()];
                    for (idx, &g) in dn.iter().enumerate() {
                        dp[idx] = g * inv_std[idx % oc];
                    }
                    d_pre.push(dp);
                }
            }
        }

        // through the convolution, per window; weight grads sum
        let (ic, k) = (self.in_channels, self.kernel);
        let pad = (k - 1) / 2;
        let mut grads = ConvGrads::zeros(self);
        let mut d_inputs = Vec::with_capacity(caches.len());
        for (cache, dp) in caches.iter().zip(&d_pre) {
            let len = cache.input.len();
            let mut local = ConvGrads::zeros(self);
            let mut d_input = RealSeq::zeros(len, ic);
            for t in 0..len {
                for o in 0..oc {
                    let g = dp[t * oc + o];
                    if g == 0.0 {
                        continue;
                    }
                    local.bias[o] += g;
                    for kk in 0..k {
                        let src = t as isize + kk as isize - pad as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let src = src as usize;
                        let in_row = cache.input.row(src);
                        let d_row = d_input.row_mut(src);
                        for c in 0..ic {
                            local.weights[(o * ic + c) * k + kk] += g * in_row[c];
                            d_row[c] += g * self.weights[(o * ic + c) * k + kk];
                        }
                    }
                }
            }
            grads.add(&local);
            d_inputs.push(d_input);
        }
        Ok((grads, d_inputs))
    }
}

/// Per-channel mean and population variance over the pooled flat L x oc
/// activations of every window.
fn pooled_stats(pres: &[&[f64]], oc: usize) -> (Vec<f64>, Vec<f64>) {
    let total: usize = pres.iter().map(|p| p.len() / oc).sum();
    let mut mean = vec![0.0; oc];
    for pre in pres {
        for (idx, &v) in pre.iter().enumerate() {
            mean[idx % oc] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= total as f64;
    }
    let mut var = vec![0.0; oc];
    for pre in pres {
        for (idx, &v) in pre.iter().enumerate() {
            let d = v - mean[idx % oc];
            var[idx % oc] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= total as f64;
    }
    (mean, var)
}
