//! Numerical verification of gradient propagation: Jacobian products of
//! the recurrences, gradient-norm heatmaps over training, and the
//! central-difference oracle used to check every analytic backward pass.
//!
//! For the vanilla diagonal recurrence h_n = a_bar_n h_{n-1} + drive_n the
//! Jacobian of h_T with respect to h_t is the elementwise product of the
//! a_bar factors in between; with 0 < a_bar < 1 this contracts every
//! coordinate, so loss gradients decay exponentially in the horizon. The
//! momentum-augmented recurrence has block upper-triangular step Jacobians
//! `[[a_bar_n, beta I], [0, beta I]]` whose products keep a beta^k branch
//! alive — the quantities below measure both effects directly.

use crate::error::{Error, Result};
use crate::numkit::{DiagVec, Rng};

// ───────────────────────── Jacobian products ─────────────────────────

/// Blocks of the product of consecutive momentum step Jacobians.
///
/// The lower-left block is identically zero; `lower_right` is the scalar
/// beta^(horizon+1) shared by all momentum lanes.
#[derive(Clone, Debug)]
pub struct JacobianBlock {
    /// Elementwise product of the a_bar factors (hidden-to-hidden path).
    pub upper_left: DiagVec,
    /// Cross term coupling momentum lanes into hidden lanes.
    pub upper_right: DiagVec,
    /// beta^(horizon + 1): the momentum-to-momentum path.
    pub lower_right: f64,
    /// T - t, one less than the number of factors in the product.
    pub horizon: usize,
}

/// Elementwise product of `a_bars[n]` over n = t+1 ..= t_end.
///
/// The empty range (t == t_end) yields the all-ones diagonal. When each
/// factor is exp(delta_n * a), the product equals exp(sum delta_n * a) in
/// closed form.
pub fn vanilla_jacobian_product(a_bars: &[DiagVec], t: usize, t_end: usize) -> Result<DiagVec> {
    if t > t_end || t_end >= a_bars.len() {
        return Err(Error::IndexRange { t, t_end, len: a_bars.len() });
    }
    let n = a_bars[t].len();
    let mut prod = vec![1.0; n];
    for a in &a_bars[t + 1..=t_end] {
        if a.len() != n {
            return Err(Error::WidthMismatch { expected: n, got: a.len() });
        }
        for (p, &v) in prod.iter_mut().zip(&a.values) {
            *p *= v;
        }
    }
    Ok(DiagVec { values: prod })
}

/// Blocks of the ordered product of the momentum step Jacobians
/// `M'_n = [[diag(a_bars[n]), beta I], [0, beta I]]` over the inclusive
/// step range n = t ..= t_end (t_end - t + 1 factors, so the horizon
/// T - t carries a beta exponent of T - t + 1).
///
/// Computed by the closed-form block recurrence that multiplying one more
/// factor on the right induces; the dense 2N x 2N product is the oracle
/// this is tested against.
pub fn momentum_jacobian_product(
    a_bars: &[DiagVec],
    beta: f64,
    t: usize,
    t_end: usize,
) -> Result<JacobianBlock> {
    if t > t_end || t_end >= a_bars.len() {
        return Err(Error::IndexRange { t, t_end, len: a_bars.len() });
    }
    let n = a_bars[t].len();
    let mut upper_left = vec![1.0; n];
    let mut upper_right = vec![0.0; n];
    let mut lower_right = 1.0;
    // right-multiply R <- R * M'_k for k = t_end down to t:
    //   Q <- beta * (P + Q);  P <- P .* a_bar_k;  r <- beta * r
    for k in (t..=t_end).rev() {
        let a = &a_bars[k];
        if a.len() != n {
            return Err(Error::WidthMismatch { expected: n, got: a.len() });
        }
        for i in 0..n {
            upper_right[i] = beta * (upper_left[i] + upper_right[i]);
            upper_left[i] *= a.values[i];
        }
        lower_right *= beta;
    }
    Ok(JacobianBlock {
        upper_left: DiagVec { values: upper_left },
        upper_right: DiagVec { values: upper_right },
        lower_right,
        horizon: t_end - t,
    })
}

/// Dense 2N x 2N ordered product `M'_T ... M'_t` of momentum step
/// Jacobians; the independent oracle for [`momentum_jacobian_product`].
pub fn dense_momentum_jacobian(
    a_bars: &[DiagVec],
    beta: f64,
    t: usize,
    t_end: usize,
) -> Result<Vec<f64>> {
    if t > t_end || t_end >= a_bars.len() {
        return Err(Error::IndexRange { t, t_end, len: a_bars.len() });
    }
    let n = a_bars[t].len();
    let w = 2 * n;
    let mut prod: Option<Vec<f64>> = None;
    for k in t..=t_end {
        let mut m = vec![0.0; w * w];
        for i in 0..n {
            m[i * w + i] = a_bars[k].values[i];
            m[i * w + n + i] = beta;
            m[(n + i) * w + n + i] = beta;
        }
        prod = Some(match prod {
            None => m,
            // multiply the new factor on the LEFT: prod <- M'_k * prod
            Some(p) => {
                let mut next = vec![0.0; w * w];
                for i in 0..w {
                    for kk in 0..w {
                        let mik = m[i * w + kk];
                        if mik == 0.0 {
                            continue;
                        }
                        for j in 0..w {
                            next[i * w + j] += mik * p[kk * w + j];
                        }
                    }
                }
                next
            }
        });
    }
    Ok(prod.expect("nonempty range"))
}

// ───────────────────────── finite differences ─────────────────────────

/// Central-difference gradient (f(p + h e_i) - f(p - h e_i)) / 2h per
/// coordinate. Ground truth for every analytic backward pass in the crate.
pub fn finite_diff_oracle<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::NonFinite { what: format!("finite-difference step {step}") });
    }
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = f(&probe);
        probe[i] = orig - step;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { what: format!("objective at coordinate {i}") });
        }
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over coordinates with |analytic| > `min_grad`.
    pub max_rel_err: f64,
    pub worst_coord: Option<usize>,
    /// Worst disagreement between the two finite-difference step sizes on
    /// the checked coordinates — large values flag FD noise, not gradient
    /// bugs.
    pub fd_consistency: f64,
    pub checked: usize,
}

/// Check `analytic` against central differences of `f` at `point`.
///
/// Central differences at the two stated steps (1e-4 and 1e-5) bracket
/// the usable scale per coordinate: the finer step is truncation-limited,
/// the coarser one cancellation-limited, so each coordinate is scored
/// against whichever step certifies it more tightly. Differences below
/// the roundoff resolution of a step — eps * |f| / (2h), what subtractive
/// cancellation leaves of two nearly equal objective values — are not
/// evidence of anything and are discounted; a systematically wrong
/// gradient exceeds that floor by orders of magnitude and fails both
/// steps. Coordinates with |analytic| <= `min_grad` are skipped.
pub fn gradcheck<F>(mut f: F, point: &[f64], analytic: &[f64], min_grad: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::WidthMismatch { expected: point.len(), got: analytic.len() });
    }
    let f0 = f(point);
    if !f0.is_finite() {
        return Err(Error::NonFinite { what: "objective at the base point".into() });
    }
    let fd_fine = finite_diff_oracle(&mut f, point, 1e-5)?;
    let fd_coarse = finite_diff_oracle(&mut f, point, 1e-4)?;
    // cancellation noise of (f+ - f-)/2h, with slack for error growth
    // inside the objective evaluation itself
    let noise_fine = 8.0 * f64::EPSILON * f0.abs() / (2.0 * 1e-5);
    let noise_coarse = 8.0 * f64::EPSILON * f0.abs() / (2.0 * 1e-4);
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut fd_consistency = 0.0f64;
    let mut checked = 0;
    for i in 0..point.len() {
        if analytic[i].abs() <= min_grad {
            continue;
        }
        checked += 1;
        let rel_at = |fd: f64, noise: f64| {
            let diff = ((analytic[i] - fd).abs() - noise).max(0.0);
            diff / analytic[i].abs().max(fd.abs())
        };
        let rel = rel_at(fd_fine[i], noise_fine).min(rel_at(fd_coarse[i], noise_coarse));
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some(i);
        }
        let scale = analytic[i].abs().max(fd_fine[i].abs());
        fd_consistency = fd_consistency.max((fd_fine[i] - fd_coarse[i]).abs() / scale);
    }
    Ok(GradCheck { max_rel_err, worst_coord: worst, fd_consistency, checked })
}

// ───────────────────────── gradient heatmaps ─────────────────────────

/// Matrix of loss-gradient norms ||dL/ds_t||_2 indexed by (time step,
/// training epoch); row 0 is the pre-training state.
#[derive(Clone, Debug)]
pub struct GradientReport {
    /// `norms[e][t]`: gradient norm at time step t after e training epochs.
    pub norms: Vec<Vec<f64>>,
    /// Human-readable run descriptor echoed into artifacts.
    pub config: String,
}

impl GradientReport {
    pub fn seq_len(&self) -> usize {
        self.norms.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Decay ratio ||dL/ds_1|| / ||dL/ds_L|| at the final recorded epoch.
    pub fn first_to_last_ratio(&self) -> f64 {
        match self.norms.last() {
            Some(row) if row.len() >= 2 && row[row.len() - 1] != 0.0 => {
                row[0] / row[row.len() - 1]
            }
            _ => f64::NAN,
        }
    }

    /// CSV with header `t,epoch_0,epoch_1,...`, one row per time step,
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for e in 0..self.norms.len() {
            out.push_str(&format!(",epoch_{e}"));
        }
        out.push('\n');
        for t in 0..self.seq_len() {
            out.push_str(&format!("{}", t + 1));
            for row in &self.norms {
                out.push_str(&format!(",{:.16e}", row[t]));
            }
            out.push('\n');
        }
        out
    }
}

/// Model variant probed by [`gradient_heatmap`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradFlowVariant {
    Vanilla,
    /// Momentum recurrence with frozen (alpha, beta).
    Momentum { alpha: f64, beta: f64 },
}

/// Configuration of a gradient-flow run: a small classifier on the
/// delayed-recall task, probed once per epoch.
///
/// The probe records ||dL/ds_t||_2 of the LAST SSM layer's recurrent
/// state at every time step, where s_t is the full per-step state of the
/// layer (hidden lanes for the vanilla variant, hidden + momentum lanes
/// for the momentum variant — the momentum pathway is precisely where
/// gradient mass survives, so it belongs in the measurement). The probe
/// readout uses the last time step so the decay of backpropagated-
/// through-time gradient is visible rather than being masked by the
/// pooled head's direct per-step contributions.
#[derive(Clone, Debug)]
pub struct GradFlowConfig {
    pub variant: GradFlowVariant,
    pub seq_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d_model: usize,
    pub state_dim: usize,
    pub n_layers: usize,
    pub classes: usize,
    /// Initial softplus(theta) range for the step-size bias.
    pub delta_init: (f64, f64),
    pub train_windows: usize,
    pub delay: usize,
    pub noise: f64,
    pub lr: f64,
    pub batch: usize,
}

impl GradFlowConfig {
    pub fn new(variant: GradFlowVariant, seq_len: usize, epochs: usize, seed: u64) -> Self {
        GradFlowConfig {
            variant,
            seq_len,
            epochs,
            seed,
            d_model: 12,
            state_dim: 8,
            n_layers: 2,
            classes: 4,
            // large enough that every hidden lane decays visibly across
            // the window
            delta_init: (0.1, 0.3),
            train_windows: 64,
            delay: seq_len * 3 / 4,
            noise: 1.0,
            lr: 1e-3,
            batch: 16,
        }
    }

    pub fn describe(&self) -> String {
        let variant = match self.variant {
            GradFlowVariant::Vanilla => "vanilla".to_string(),
            GradFlowVariant::Momentum { alpha, beta } => {
                format!("momentum(alpha={alpha},beta={beta})")
            }
        };
        format!(
            "variant={variant} L={} epochs={} seed={} d_model={} N={} layers={}",
            self.seq_len, self.epochs, self.seed, self.d_model, self.state_dim, self.n_layers
        )
    }
}

/// Train a small classifier and record the per-time-step gradient norms
/// of the last SSM layer once before training and once after each epoch.
/// Deterministic given the seed; fails with the epoch index if the loss
/// diverges.
pub fn gradient_heatmap(cfg: &GradFlowConfig) -> Result<GradientReport> {
    crate::har_pipeline::gradflow::run(cfg)
}

/// Convenience: gradient heatmap from a fresh RNG seed, matching the
/// variant and length only.
pub fn gradient_heatmap_simple(
    variant: GradFlowVariant,
    seq_len: usize,
    epochs: usize,
    rng: &mut Rng,
) -> Result<GradientReport> {
    let cfg = GradFlowConfig::new(variant, seq_len, epochs, rng.next_u64());
    gradient_heatmap(&cfg)
}
