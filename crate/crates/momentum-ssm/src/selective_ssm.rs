//! Input-conditioned (selective) diagonal SSM layer.
//!
//! Per step n the layer projects the input x_n into a step size, an input
//! projection, and an output projection:
//!
//! ```text
//! delta_n[d] = softplus(theta[d] + w_delta . x_n)      (> 0, per channel)
//! b_n = W_b x_n        c_n = W_c x_n                   (length N, shared)
//! ```
//!
//! discretizes the fixed diagonal state matrix a = -exp(a_log) by
//! zero-order hold, `a_bar = exp(delta * a)` with the first-order
//! `b_bar ~= delta * b` input scaling, and runs the diagonal recurrence
//!
//! ```text
//! h_n[d,j] = a_bar_n[d,j] h_{n-1}[d,j] + delta_n[d] b_n[j] x_n[d]
//! y_n[d]   = sum_j c_n[j] h_n[d,j] + skip[d] x_n[d]
//! ```
//!
//! through the affine scan. Since a < 0 and delta > 0, every a_bar entry
//! lies strictly inside (0, 1): products of step Jacobians contract
//! monotonically with horizon, which is what the momentum variants exist
//! to counteract.
//!
//! [`ssm_backward`] is a hand-derived reverse-time adjoint —
//! `lam_n = c_n * gy_n + a_bar_{n+1} . lam_{n+1}` — chained into every
//! parameter and the input; it is verified against central differences.

use crate::affine_scan::{scan, AffineElement, ScanMode, StructuredTransition};
use crate::error::{Error, Result};
use crate::numkit::{sigmoid, softplus, softplus_inv, DiagVec, RealSeq, Rng};

/// Learnable quantities of one selective SSM layer with D channels and N
/// states per channel.
#[derive(Clone, Debug)]
pub struct SelectiveParams {
    pub channels: usize,
    pub state_dim: usize,
    /// D x N; the state diagonal is a = -exp(a_log), strictly negative.
    pub a_log: Vec<f64>,
    /// N x D input-projection weights.
    pub w_b: Vec<f64>,
    /// N x D output-projection weights.
    pub w_c: Vec<f64>,
    /// Length-D step-size projection (a single scalar per step, broadcast).
    pub w_delta: Vec<f64>,
    /// Length-D step-size bias theta.
    pub theta_delta: Vec<f64>,
    /// Length-D feedthrough scalars.
    pub skip: Vec<f64>,
}

impl SelectiveParams {
    /// Standard initialization: `a[d][j] = -(j+1)`, softplus(theta)
    /// log-uniform in [1e-3, 1e-1], small random projections, skip = 1.
    pub fn init(channels: usize, state_dim: usize, rng: &mut Rng) -> Self {
        Self::init_with_delta_range(channels, state_dim, 1e-3, 1e-1, rng)
    }

    /// Initialization with an explicit softplus(theta) range, used by the
    /// gradient-flow experiments to control how fast hidden lanes decay.
    pub fn init_with_delta_range(
        channels: usize,
        state_dim: usize,
        delta_lo: f64,
        delta_hi: f64,
        rng: &mut Rng,
    ) -> Self {
        let d = channels;
        let n = state_dim;
        let a_log = (0..d * n).map(|i| (((i % n) + 1) as f64).ln()).collect();
        let proj_scale = 1.0 / (d as f64).sqrt();
        let w_b = (0..n * d).map(|_| rng.normal() * proj_scale).collect();
        let w_c = (0..n * d).map(|_| rng.normal() * proj_scale).collect();
        let w_delta = (0..d).map(|_| rng.normal() * proj_scale * 0.1).collect();
        let theta_delta =
            (0..d).map(|_| softplus_inv(rng.log_uniform(delta_lo, delta_hi))).collect();
        SelectiveParams {
            channels,
            state_dim,
            a_log,
            w_b,
            w_c,
            w_delta,
            theta_delta,
            skip: vec![1.0; d],
        }
    }

    /// `a[d][j] = -exp(a_log[d][j])`.
    pub fn a(&self, d: usize, j: usize) -> f64 {
        -self.a_log[d * self.state_dim + j].exp()
    }
}

/// Gradients with respect to every tensor of [`SelectiveParams`].
#[derive(Clone, Debug)]
pub struct SsmGrads {
    pub a_log: Vec<f64>,
    pub w_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_delta: Vec<f64>,
    pub theta_delta: Vec<f64>,
    pub skip: Vec<f64>,
}

impl SsmGrads {
    pub fn zeros(p: &SelectiveParams) -> Self {
        SsmGrads {
            a_log: vec![0.0; p.a_log.len()],
            w_b: vec![0.0; p.w_b.len()],
            w_c: vec![0.0; p.w_c.len()],
            w_delta: vec![0.0; p.w_delta.len()],
            theta_delta: vec![0.0; p.theta_delta.len()],
            skip: vec![0.0; p.skip.len()],
        }
    }
}

/// Everything the backward pass needs from a forward run. Flat layout:
/// `a_bar`, `drive`, `hidden` are L x D x N with index ((n*D)+d)*N+j.
#[derive(Clone, Debug)]
pub struct SsmCache {
    pub x: RealSeq,
    /// L x D step sizes.
    pub delta: Vec<f64>,
    /// Length-L scalar step-size projections w_delta . x_n.
    pub pre_u: Vec<f64>,
    /// L x N input projections b_n.
    pub b: Vec<f64>,
    /// L x N output projections c_n.
    pub c: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub drive: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Sequential-recurrence flop estimate of the forward pass.
    pub flops: u64,
}

/// Borrowed view of one discretized step.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveStep<'a> {
    /// D x N, entries in (0, 1).
    pub a_bar: &'a [f64],
    /// D x N input drives b_bar_n x_n.
    pub drive: &'a [f64],
    /// Length-N output projection.
    pub c: &'a [f64],
}

impl SsmCache {
    pub fn step(&self, n: usize) -> SelectiveStep<'_> {
        let d = self.x.channels();
        let nn = self.b.len() / self.x.len();
        let dn = d * (self.a_bar.len() / (self.x.len() * d));
        let span = self.a_bar.len() / self.x.len();
        debug_assert_eq!(span, dn);
        SelectiveStep {
            a_bar: &self.a_bar[n * span..(n + 1) * span],
            drive: &self.drive[n * span..(n + 1) * span],
            c: &self.c[n * nn..(n + 1) * nn],
        }
    }
}

/// Input-dependent projections at one step: per-channel positive step
/// sizes, and the shared input/output projections.
pub fn selective_projections(
    p: &SelectiveParams,
    xn: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = p.channels;
    let n = p.state_dim;
    let u: f64 = p.w_delta.iter().zip(xn).map(|(w, x)| w * x).sum();
    let delta: Vec<f64> = (0..d).map(|i| softplus(p.theta_delta[i] + u)).collect();
    let b: Vec<f64> = (0..n)
        .map(|j| p.w_b[j * d..(j + 1) * d].iter().zip(xn).map(|(w, x)| w * x).sum())
        .collect();
    let c: Vec<f64> = (0..n)
        .map(|j| p.w_c[j * d..(j + 1) * d].iter().zip(xn).map(|(w, x)| w * x).sum())
        .collect();
    (delta, b, c)
}

/// Zero-order-hold discretization of one scalar channel, a < 0, delta > 0.
///
/// Returns (a_bar, b_scale) with a_bar = exp(delta a) and the input scale
/// either exact, (exp(delta a) - 1)/a, or the first-order approximation
/// delta that selective layers default to.
pub fn discretize_zoh(a: f64, delta: f64, exact: bool) -> (f64, f64) {
    let a_bar = (delta * a).exp();
    let b_scale = if exact { (a_bar - 1.0) / a } else { delta };
    (a_bar, b_scale)
}

/// Forward pass through the parallel scan; see [`ssm_forward_mode`].
pub fn ssm_forward(p: &SelectiveParams, x: &RealSeq) -> Result<(RealSeq, SsmCache)> {
    ssm_forward_mode(p, x, ScanMode::Parallel)
}

/// Forward pass with h_0 = 0. The recurrence runs as a width D*N diagonal
/// affine scan; sequential and parallel strategies agree to 1e-9 relative.
pub fn ssm_forward_mode(
    p: &SelectiveParams,
    x: &RealSeq,
    mode: ScanMode,
) -> Result<(RealSeq, SsmCache)> {
    if x.channels() != p.channels {
        return Err(Error::WidthMismatch { expected: p.channels, got: x.channels() });
    }
    let (len, d, n) = (x.len(), p.channels, p.state_dim);
    let dn = d * n;
    let mut cache = SsmCache {
        x: x.clone(),
        delta: Vec::with_capacity(len * d),
        pre_u: Vec::with_capacity(len),
        b: Vec::with_capacity(len * n),
        c: Vec::with_capacity(len * n),
        a_bar: Vec::with_capacity(len * dn),
        drive: Vec::with_capacity(len * dn),
        hidden: Vec::new(),
        flops: 0,
    };

    let mut elements = Vec::with_capacity(len);
    for step in 0..len {
        let xr = x.row(step);
        let u: f64 = p.w_delta.iter().zip(xr).map(|(w, v)| w * v).sum();
        cache.pre_u.push(u);
        let (delta, b, c) = selective_projections(p, xr);
        let mut a_bar = Vec::with_capacity(dn);
        let mut drive = Vec::with_capacity(dn);
        for di in 0..d {
            for j in 0..n {
                let ab = (delta[di] * p.a(di, j)).exp();
                a_bar.push(ab);
                drive.push(delta[di] * b[j] * xr[di]);
            }
        }
        cache.a_bar.extend_from_slice(&a_bar);
        cache.drive.extend_from_slice(&drive);
        cache.delta.extend_from_slice(&delta);
        cache.b.extend_from_slice(&b);
        cache.c.extend_from_slice(&c);
        elements.push(AffineElement {
            transition: StructuredTransition::Diagonal(DiagVec { values: a_bar }),
            offset: drive,
        });
    }
    // projections 4ND + D + softplus D; discretize 2 + drive 2 per lane
    cache.flops += (len * (4 * n * d + 2 * d + 4 * dn)) as u64;

    let out = scan(&elements, &vec![0.0; dn], mode)?;
    cache.flops += (len * 2 * dn) as u64; // recurrence mul-add per lane

    let mut hidden = Vec::with_capacity(len * dn);
    for s in &out.states {
        hidden.extend_from_slice(s);
    }
    cache.hidden = hidden;

    let y = readout(&cache, p)?;
    cache.flops += (len * (2 * dn + 2 * d)) as u64;
    Ok((y, cache))
}

/// y_n[d] = sum_j c_n[j] h_n[d,j] + skip[d] x_n[d] from cached states.
pub(crate) fn readout(cache: &SsmCache, p: &SelectiveParams) -> Result<RealSeq> {
    let (len, d, n) = (cache.x.len(), p.channels, p.state_dim);
    let mut y = RealSeq::zeros(len, d);
    for step in 0..len {
        let c = &cache.c[step * n..(step + 1) * n];
        let xr = cache.x.row(step);
        for di in 0..d {
            let h = &cache.hidden[(step * d + di) * n..(step * d + di + 1) * n];
            let mut acc = p.skip[di] * xr[di];
            for j in 0..n {
                acc += c[j] * h[j];
            }
            y.set(step, di, acc);
        }
    }
    Ok(y)
}

/// Output of an analytic backward pass.
#[derive(Clone, Debug)]
pub struct BackwardOutput<G> {
    pub grads: SsmGrads,
    /// Variant-specific parameter gradients (unit type for vanilla).
    pub variant_grads: G,
    pub grad_x: RealSeq,
    /// ||dL/ds_n||_2 of the layer's recurrent state per time step (the
    /// full state: hidden lanes, plus momentum/variance lanes when the
    /// variant has them).
    pub state_norms: Vec<f64>,
}

/// Reverse-time adjoint of [`ssm_forward`]; matches central finite
/// differences to 1e-4 relative on every coordinate that matters.
pub fn ssm_backward(
    p: &SelectiveParams,
    cache: &SsmCache,
    grad_y: &RealSeq,
) -> Result<BackwardOutput<()>> {
    check_cache(p, cache, grad_y)?;
    let (len, d, n) = (cache.x.len(), p.channels, p.state_dim);
    let dn = d * n;
    let mut d_abar = vec![0.0; len * dn];
    let mut d_drive = vec![0.0; len * dn];
    let mut state_norms = vec![0.0; len];

    // lam[d*n+j] holds lam_{n+1} entering the step below
    let mut lam = vec![0.0; dn];
    for step in (0..len).rev() {
        let gy = grad_y.row(step);
        let c = &cache.c[step * n..(step + 1) * n];
        let mut norm_sq = 0.0;
        for di in 0..d {
            for j in 0..n {
                let idx = di * n + j;
                let mut l = gy[di] * c[j];
                if step + 1 < len {
                    l += cache.a_bar[(step + 1) * dn + idx] * lam[idx];
                }
                lam[idx] = l;
                d_drive[step * dn + idx] = l;
                if step > 0 {
                    d_abar[step * dn + idx] = l * cache.hidden[(step - 1) * dn + idx];
                }
                norm_sq += l * l;
            }
        }
        state_norms[step] = norm_sq.sqrt();
    }

    let (grads, grad_x) = chain_into_params(p, cache, grad_y, &d_abar, &d_drive)?;
    Ok(BackwardOutput { grads, variant_grads: (), grad_x, state_norms })
}

pub(crate) fn check_cache(p: &SelectiveParams, cache: &SsmCache, grad_y: &RealSeq) -> Result<()> {
    let (len, d, n) = (cache.x.len(), p.channels, p.state_dim);
    if cache.x.channels() != d
        || cache.a_bar.len() != len * d * n
        || cache.b.len() != len * n
        || grad_y.len() != len
        || grad_y.channels() != d
    {
        return Err(Error::CacheMismatch { what: "selective layer shapes" });
    }
    Ok(())
}

/// Chain adjoints of the discretized quantities (d a_bar, d drive) and the
/// output side into every parameter tensor and the input. Shared by all
/// recurrence variants, whose only difference is how the adjoints of
/// a_bar and drive are produced.
pub(crate) fn chain_into_params(
    p: &SelectiveParams,
    cache: &SsmCache,
    grad_y: &RealSeq,
    d_abar: &[f64],
    d_drive: &[f64],
) -> Result<(SsmGrads, RealSeq)> {
    let (len, d, n) = (cache.x.len(), p.channels, p.state_dim);
    let dn = d * n;
    let mut g = SsmGrads::zeros(p);
    let mut grad_x = RealSeq::zeros(len, d);
    let mut d_a = vec![0.0; d * n]; // wrt a itself; folded into a_log at the end

    for step in 0..len {
        let xr = cache.x.row(step);
        let gy = grad_y.row(step);
        let b = &cache.b[step * n..(step + 1) * n];
        let delta = &cache.delta[step * d..(step + 1) * d];
        let gx = grad_x.row_mut(step);

        // output side: y = sum_j c_j h_j + skip * x
        let mut d_c_vec = vec![0.0; n];
        for di in 0..d {
            let h = &cache.hidden[(step * d + di) * n..(step * d + di + 1) * n];
            for j in 0..n {
                d_c_vec[j] += gy[di] * h[j];
            }
            g.skip[di] += gy[di] * xr[di];
            gx[di] += gy[di] * p.skip[di];
        }

        // recurrence side
        let mut du = 0.0; // adjoint of u = w_delta . x_n
        let mut d_b_vec = vec![0.0; n];
        for di in 0..d {
            let mut dd = 0.0; // adjoint of delta[di]
            for j in 0..n {
                let idx = step * dn + di * n + j;
                let ab = cache.a_bar[idx];
                let da = d_abar[idx];
                let dg = d_drive[idx];
                let a = p.a(di, j);
                dd += da * a * ab + dg * b[j] * xr[di];
                d_a[di * n + j] += da * delta[di] * ab;
                d_b_vec[j] += dg * delta[di] * xr[di];
                gx[di] += dg * delta[di] * b[j];
            }
            // delta = softplus(theta + u)
            let dpre = dd * sigmoid(p.theta_delta[di] + cache.pre_u[step]);
            g.theta_delta[di] += dpre;
            du += dpre;
        }
        for e in 0..d {
            g.w_delta[e] += du * xr[e];
            gx[e] += du * p.w_delta[e];
        }
        for j in 0..n {
            let (dbj, dcj) = (d_b_vec[j], d_c_vec[j]);
            for e in 0..d {
                g.w_b[j * d + e] += dbj * xr[e];
                gx[e] += dbj * p.w_b[j * d + e];
                g.w_c[j * d + e] += dcj * xr[e];
                gx[e] += dcj * p.w_c[j * d + e];
            }
        }
    }

    // a = -exp(a_log) so da/da_log = a
    for di in 0..d {
        for j in 0..n {
            g.a_log[di * n + j] = d_a[di * n + j] * p.a(di, j);
        }
    }
    Ok((g, grad_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient_lab::{finite_diff_oracle, gradcheck};

    fn frozen_scalar_params() -> SelectiveParams {
        // D = 1, N = 1, delta = softplus(theta) = 1, a = -1, identity b/c
        SelectiveParams {
            channels: 1,
            state_dim: 1,
            a_log: vec![0.0],
            w_b: vec![1.0],
            w_c: vec![1.0],
            w_delta: vec![0.0],
            theta_delta: vec![softplus_inv(1.0)],
            skip: vec![0.0],
        }
    }

    #[test]
    fn projections_at_zero_input() {
        let mut rng = Rng::new(1);
        let p = SelectiveParams::init(3, 4, &mut rng);
        let (delta, b, c) = selective_projections(&p, &[0.0, 0.0, 0.0]);
        assert!(b.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
        for (i, &dl) in delta.iter().enumerate() {
            assert!((dl - softplus(p.theta_delta[i])).abs() < 1e-15);
            assert!(dl > 0.0);
        }
    }

    #[test]
    fn projections_softplus_zero_is_ln_two() {
        let p = SelectiveParams {
            channels: 2,
            state_dim: 2,
            a_log: vec![0.0; 4],
            w_b: vec![0.0; 4],
            w_c: vec![0.0; 4],
            w_delta: vec![0.0; 2],
            theta_delta: vec![0.0; 2],
            skip: vec![0.0; 2],
        };
        let (delta, _, _) = selective_projections(&p, &[0.7, -0.3]);
        for dl in delta {
            assert!((dl - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn projections_identity_matrix_picks_column() {
        // w_b = I (N = D = 3), x = e_2 -> b = e_2
        let d = 3;
        let mut w_b = vec![0.0; 9];
        for i in 0..3 {
            w_b[i * d + i] = 1.0;
        }
        let p = SelectiveParams {
            channels: d,
            state_dim: 3,
            a_log: vec![0.0; 9],
            w_b,
            w_c: vec![0.0; 9],
            w_delta: vec![0.0; 3],
            theta_delta: vec![0.0; 3],
            skip: vec![0.0; 3],
        };
        let (_, b, _) = selective_projections(&p, &[0.0, 0.0, 1.0]);
        assert_eq!(b, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn zoh_examples() {
        let (a_bar, _) = discretize_zoh(-2.0, 0.1, false);
        assert!((a_bar - 0.8187307530779818).abs() < 1e-16);
        let (_, exact) = discretize_zoh(-2.0, 0.1, true);
        assert!((exact - 0.09063462346100909).abs() < 1e-15);
        let (_, approx) = discretize_zoh(-2.0, 0.1, false);
        assert_eq!(approx, 0.1);
        // the approximation gap at delta*a = -0.2 is about 9.4% of approx
        let gap = (exact - approx).abs() / approx;
        assert!((gap - 0.094).abs() < 5e-3, "gap {gap}");
    }

    #[test]
    fn zoh_first_order_agreement_for_small_steps() {
        let mut rng = Rng::new(4);
        for _ in 0..500 {
            let a = -rng.range(0.05, 4.0);
            let delta = rng.range(1e-4, 0.1 / a.abs());
            let (_, exact) = discretize_zoh(a, delta, true);
            let (_, approx) = discretize_zoh(a, delta, false);
            let bound = 0.5 * (delta * a).abs();
            assert!(
                ((exact - approx) / approx).abs() <= bound + 1e-12,
                "a={a} delta={delta}"
            );
        }
    }

    #[test]
    fn forward_zero_input_zero_output() {
        let mut rng = Rng::new(2);
        let p = SelectiveParams::init(3, 4, &mut rng);
        let x = RealSeq::zeros(10, 3);
        let (y, _) = ssm_forward(&p, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_hand_recurrence() {
        // x = [1, 0]: drive = [1, 0], h = [1, e^-1]
        let p = frozen_scalar_params();
        let x = RealSeq::from_scalars(&[1.0, 0.0]).unwrap();
        let (y, cache) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
        assert!((cache.hidden[0] - 1.0).abs() < 1e-15);
        assert!((cache.hidden[1] - 0.36787944117144233).abs() < 1e-15);
        // with the input-dependent output projection c_n = x_n: y = [1, 0]
        assert!((y.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(y.get(1, 0).abs() < 1e-15);
        // with a frozen c = 1 readout, y would equal h: [1, 0.36787944...]
        let y_frozen: Vec<f64> = cache.hidden.clone();
        assert!((y_frozen[1] - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn a_bar_strictly_inside_unit_interval() {
        let mut rng = Rng::new(3);
        let p = SelectiveParams::init(4, 6, &mut rng);
        let x = RealSeq::new(
            20,
            4,
            (0..80).map(|_| rng.range(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let (_, cache) = ssm_forward(&p, &x).unwrap();
        assert!(cache.a_bar.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_parallel_matches_sequential() {
        let mut rng = Rng::new(7);
        let p = SelectiveParams::init(3, 5, &mut rng);
        let x = RealSeq::new(
            200,
            3,
            (0..600).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let (ys, _) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
        let (yp, _) = ssm_forward_mode(&p, &x, ScanMode::Parallel).unwrap();
        for i in 0..ys.data().len() {
            let (a, b) = (ys.data()[i], yp.data()[i]);
            let scale = a.abs().max(b.abs()).max(1e-12);
            assert!(((a - b) / scale).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_linear_in_x_when_projections_frozen() {
        // freeze delta (w_delta = 0), and note b_n, c_n are linear in x, so
        // with those also frozen (constant drive/readout) superposition
        // holds; emulate frozen b/c by a two-channel trick: compare h from
        // the scan directly
        let p = frozen_scalar_params();
        let x1 = RealSeq::from_scalars(&[0.3, -0.8, 0.5]).unwrap();
        let x2 = RealSeq::from_scalars(&[-1.1, 0.4, 0.9]).unwrap();
        let sum = RealSeq::from_scalars(&[0.3 - 1.1, -0.8 + 0.4, 0.5 + 0.9]).unwrap();
        // hidden is linear in drive only when drive is linear in x; here
        // drive = delta * (w_b x) * x is quadratic, so superposition must
        // FAIL through the selective path:
        let (_, c1) = ssm_forward(&p, &x1).unwrap();
        let (_, c2) = ssm_forward(&p, &x2).unwrap();
        let (_, cs) = ssm_forward(&p, &sum).unwrap();
        let lin_err: f64 = (0..3)
            .map(|i| (cs.hidden[i] - c1.hidden[i] - c2.hidden[i]).abs())
            .fold(0.0, f64::max);
        assert!(lin_err > 1e-3, "selectivity should break superposition");

        // with a truly frozen drive (external b), the diagonal recurrence
        // itself is linear: verify superposition at the scan level
        let run = |drive: &[f64]| -> Vec<f64> {
            let mut h = 0.0;
            let a_bar = (-1.0f64).exp();
            drive
                .iter()
                .map(|&g| {
                    h = a_bar * h + g;
                    h
                })
                .collect()
        };
        let d1 = [0.3, -0.8, 0.5];
        let d2 = [-1.1, 0.4, 0.9];
        let ds: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let (h1, h2, hs) = (run(&d1), run(&d2), run(&ds));
        for i in 0..3 {
            assert!((hs[i] - h1[i] - h2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_zero_grad_y() {
        let mut rng = Rng::new(10);
        let p = SelectiveParams::init(2, 3, &mut rng);
        let x = RealSeq::new(8, 2, (0..16).map(|_| rng.normal()).collect()).unwrap();
        let (_, cache) = ssm_forward(&p, &x).unwrap();
        let out = ssm_backward(&p, &cache, &RealSeq::zeros(8, 2)).unwrap();
        assert!(out.grads.w_b.iter().all(|&v| v == 0.0));
        assert!(out.grads.theta_delta.iter().all(|&v| v == 0.0));
        assert!(out.grad_x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_step_c_gradient_closed_form() {
        // L = 1: dL/d w_c[j][e] = gy * h_1[j] * x[e]
        let mut rng = Rng::new(11);
        let p = SelectiveParams::init(2, 3, &mut rng);
        let x = RealSeq::new(1, 2, vec![0.7, -0.4]).unwrap();
        let (_, cache) = ssm_forward(&p, &x).unwrap();
        let gy = RealSeq::new(1, 2, vec![1.3, -0.2]).unwrap();
        let out = ssm_backward(&p, &cache, &gy).unwrap();
        for j in 0..3 {
            let dc: f64 = (0..2).map(|d| gy.get(0, d) * cache.hidden[d * 3 + j]).sum();
            for e in 0..2 {
                let expect = dc * x.get(0, e);
                assert!((out.grads.w_c[j * 2 + e] - expect).abs() < 1e-14);
            }
        }
    }

    /// Flatten parameters for finite differences over the whole layer.
    fn flatten(p: &SelectiveParams) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&p.a_log);
        v.extend(&p.w_b);
        v.extend(&p.w_c);
        v.extend(&p.w_delta);
        v.extend(&p.theta_delta);
        v.extend(&p.skip);
        v
    }

    fn unflatten(p: &SelectiveParams, v: &[f64]) -> SelectiveParams {
        let mut q = p.clone();
        let mut k = 0;
        for dst in [
            &mut q.a_log,
            &mut q.w_b,
            &mut q.w_c,
            &mut q.w_delta,
            &mut q.theta_delta,
            &mut q.skip,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&v[k..k + len]);
            k += len;
        }
        q
    }

    fn flatten_grads(g: &SsmGrads) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&g.a_log);
        v.extend(&g.w_b);
        v.extend(&g.w_c);
        v.extend(&g.w_delta);
        v.extend(&g.theta_delta);
        v.extend(&g.skip);
        v
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(2025);
        for trial in 0..4 {
            let (d, n, len) = (4, 8, 32);
            let p = SelectiveParams::init(d, n, &mut rng);
            let x =
                RealSeq::new(len, d, (0..len * d).map(|_| rng.normal() * 0.7).collect()).unwrap();
            // scalar objective: weighted sum of outputs
            let w: Vec<f64> = (0..len * d).map(|_| rng.normal()).collect();
            let loss = |params: &[f64]| -> f64 {
                let q = unflatten(&p, params);
                let (y, _) = ssm_forward_mode(&q, &x, ScanMode::Sequential).unwrap();
                y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
            let gy = RealSeq::new(len, d, w.clone()).unwrap();
            let out = ssm_backward(&p, &cache, &gy).unwrap();
            let analytic = flatten_grads(&out.grads);
            let point = flatten(&p);
            let check = gradcheck(loss, &point, &analytic, 1e-8).unwrap();
            assert!(
                check.max_rel_err < 1e-4,
                "trial {trial}: rel err {} at {:?}",
                check.max_rel_err,
                check.worst_coord
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = Rng::new(77);
        let (d, n, len) = (3, 4, 12);
        let p = SelectiveParams::init(d, n, &mut rng);
        let x0: Vec<f64> = (0..len * d).map(|_| rng.normal() * 0.5).collect();
        let w: Vec<f64> = (0..len * d).map(|_| rng.normal()).collect();
        let loss = |xs: &[f64]| -> f64 {
            let x = RealSeq::new(len, d, xs.to_vec()).unwrap();
            let (y, _) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let x = RealSeq::new(len, d, x0.clone()).unwrap();
        let (_, cache) = ssm_forward_mode(&p, &x, ScanMode::Sequential).unwrap();
        let gy = RealSeq::new(len, d, w.clone()).unwrap();
        let out = ssm_backward(&p, &cache, &gy).unwrap();
        let fd = finite_diff_oracle(loss, &x0, 1e-5).unwrap();
        for i in 0..x0.len() {
            let a = out.grad_x.data()[i];
            if a.abs() <= 1e-8 {
                continue;
            }
            let rel = (a - fd[i]).abs() / a.abs().max(fd[i].abs());
            assert!(rel < 1e-4, "coord {i}: analytic {a}, fd {}", fd[i]);
        }
    }

    #[test]
    fn cache_mismatch_rejected() {
        let mut rng = Rng::new(1);
        let p = SelectiveParams::init(2, 3, &mut rng);
        let x = RealSeq::zeros(4, 2);
        let (_, cache) = ssm_forward(&p, &x).unwrap();
        let bad_gy = RealSeq::zeros(5, 2);
        assert!(matches!(
            ssm_backward(&p, &cache, &bad_gy),
            Err(Error::CacheMismatch { .. })
        ));
    }
}
