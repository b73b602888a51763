//! Desk-scale end-to-end classification pipeline for windowed
//! multichannel time series: windowed ingestion with train-split
//! normalization, a Conv1D front-end, stacked selective-SSM blocks with
//! residual pre-norm structure, a mean-pooled linear head, a
//! deterministic Adam trainer with cosine schedule and early stopping,
//! and a synthetic delayed-recall task that probes long-range memory.

mod conv;
mod model;
mod train;
pub mod gradflow;

pub use conv::{ConvCache, ConvFrontEnd, ConvGrads, Mode};
pub use model::{
    cross_entropy, Block, BlockGrads, Head, LayerNorm, Model, ModelCache, ModelConfig,
    ModelGrads, Readout, VariantConfig, VariantGrads,
};
pub use train::{
    clip_global_norm, cosine_lr, evaluate, grid_search, metrics_csv, sweep_csv, train,
    EpochMetrics, TrainConfig, Trainer,
};

use crate::error::{Error, Result};
use crate::numkit::{RealSeq, Rng};

// ───────────────────────── windowing ─────────────────────────

/// Fixed-length windowing of a continuous stream.
#[derive(Clone, Copy, Debug)]
pub struct WindowConfig {
    pub length: usize,
    /// Fraction of overlap between consecutive windows, in [0, 1).
    pub overlap: f64,
    pub channels: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { length: 512, overlap: 0.5, channels: 6 }
    }
}

impl WindowConfig {
    pub fn stride(&self) -> usize {
        let s = (self.length as f64 * (1.0 - self.overlap)).round() as usize;
        s.max(1)
    }
}

/// Cut a T x channels stream into overlapping windows starting at
/// multiples of the stride; the trailing remainder is dropped.
pub fn window_stream(stream: &RealSeq, wc: &WindowConfig) -> Result<Vec<RealSeq>> {
    if stream.channels() != wc.channels {
        return Err(Error::WidthMismatch { expected: wc.channels, got: stream.channels() });
    }
    if stream.len() < wc.length {
        return Err(Error::TooShort { have: stream.len(), need: wc.length });
    }
    let stride = wc.stride();
    let count = (stream.len() - wc.length) / stride + 1;
    Ok((0..count).map(|k| stream.slice_rows(k * stride, wc.length)).collect())
}

// ───────────────────────── normalization ─────────────────────────

/// Per-channel mean and standard deviation computed from the training
/// split only.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl ChannelStats {
    /// Population statistics over all samples of all given windows.
    pub fn from_windows(windows: &[RealSeq]) -> Result<ChannelStats> {
        let first = windows.first().ok_or(Error::EmptyInput { what: "stats windows" })?;
        let d = first.channels();
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for w in windows {
            for n in 0..w.len() {
                for (m, &v) in mean.iter_mut().zip(w.row(n)) {
                    *m += v;
                }
            }
            count += w.len();
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; d];
        for w in windows {
            for n in 0..w.len() {
                for (s, (&v, &m)) in var.iter_mut().zip(w.row(n).iter().zip(&mean)) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.iter().map(|&s| (s / count as f64).sqrt()).collect();
        Ok(ChannelStats { mean, std })
    }

    /// `channel,mean,std` CSV rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,mean,std\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.push_str(&format!("{i},{m:.16e},{s:.16e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ChannelStats> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let _ch = parts.next();
            let m = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or(Error::Parse { line: ln + 1, msg: "bad mean".into() })?;
            let s = parts
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or(Error::Parse { line: ln + 1, msg: "bad std".into() })?;
            mean.push(m);
            std.push(s);
        }
        Ok(ChannelStats { mean, std })
    }
}

/// (x - mean) / max(std, 1e-8) per channel, in place.
pub fn zscore(window: &mut RealSeq, stats: &ChannelStats) {
    let d = window.channels();
    for n in 0..window.len() {
        let row = window.row_mut(n);
        for c in 0..d {
            row[c] = (row[c] - stats.mean[c]) / stats.std[c].max(STD_FLOOR);
        }
    }
}

// ───────────────────────── datasets ─────────────────────────

/// Labeled windows ready for training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub windows: Vec<RealSeq>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Orthonormal class patterns over the six channels: the first six are
/// cosine-basis rows, classes 6..12 are their negations. Pairwise
/// distance stays at amplitude * sqrt(2) (or 2 * amplitude for the
/// negated pair), so nearest-pattern decoding is near-perfect at the
/// default amplitude against unit noise.
fn class_pattern(class: usize, channels: usize, amplitude: f64) -> Vec<f64> {
    let base = class % channels;
    let sign = if class >= channels { -1.0 } else { 1.0 };
    let n = channels as f64;
    (0..channels)
        .map(|k| {
            let v = if base == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
                    * (std::f64::consts::PI * base as f64 * (2.0 * k as f64 + 1.0) / (2.0 * n))
                        .cos()
            };
            sign * amplitude * v
        })
        .collect()
}

/// Synthetic long-range memory probe: six-channel noise windows carrying
/// a class-identifying pattern `delay` steps before the end. The label is
/// recoverable only by retaining that information across the delay.
/// Labels are balanced to within one count per class.
pub fn make_delayed_recall(
    rng: &mut Rng,
    len: usize,
    delay: usize,
    classes: usize,
    count: usize,
    noise: f64,
) -> Result<Dataset> {
    let channels = 6;
    if delay >= len {
        return Err(Error::IndexRange { t: delay, t_end: len, len });
    }
    if classes == 0 || classes > 2 * channels {
        return Err(Error::LabelOutOfRange { label: classes, classes: 2 * channels });
    }
    let amplitude = 4.0;
    let pattern_pos = len - 1 - delay;
    let mut labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    let mut windows = Vec::with_capacity(count);
    for &label in &labels {
        let mut data = Vec::with_capacity(len * channels);
        for _ in 0..len * channels {
            data.push(rng.normal() * noise);
        }
        let pat = class_pattern(label, channels, amplitude);
        for (c, &p) in pat.iter().enumerate() {
            data[pattern_pos * channels + c] += p;
        }
        windows.push(RealSeq::new(len, channels, data)?);
    }
    Ok(Dataset { windows, labels, classes })
}
