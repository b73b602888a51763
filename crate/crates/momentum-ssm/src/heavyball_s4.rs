//! Second-order (heavy-ball) state dynamics and their implicit-Euler
//! discretization.
//!
//! The continuous system per diagonal channel is
//!
//! ```text
//! h''(t) + gamma h'(t) = -a h(t) + b x(t) + bias,     y = C h + D x
//! ```
//!
//! With velocity z = h' and augmented state s = [z; h], a backward-Euler
//! step of size delta gives `M s_n = s_{n-1} + F_n` with the per-channel
//! 2x2 step matrix
//!
//! ```text
//! M = [ 1 + gamma*delta   delta*a ]        F_n = [ delta*(b x_n + bias) ]
//!     [ -delta            1       ]              [ 0                    ]
//! ```
//!
//! Because a is diagonal, M inverts in closed form through the Schur
//! factor S = 1 / (1 + gamma*delta + delta^2 a):
//!
//! ```text
//! M^-1 = [ S                -delta*a*S ]
//!        [ delta*S   (1 + gamma*delta)*S ]
//! ```
//!
//! Note the lower-left block is +delta*S: the cofactor expansion of the
//! 2x2 inverse flips the off-diagonal signs of M, and -(-delta) = +delta.
//! Reading the block inverse off the Schur form it is easy to mis-print
//! this entry as -delta*S; that variant fails M * M^-1 = I (the `inverse`
//! property check exercises exactly this mutation). Construction verifies
//! the identity to 1e-12 per entry.
//!
//! The recurrence s_n = M^-1 s_{n-1} + M^-1 F_n is evaluated through the
//! associative scan with one independent 2x2 block per channel, so the
//! augmented scan width is exactly twice the state count.

use crate::affine_scan::{
    scan, AffineElement, ScanMode, StructuredTransition,
};
use crate::error::{Error, Result};
use crate::numkit::{DiagVec, RealSeq};

/// Smallest accepted step size; below this the Schur factor is dominated
/// by denormals and the inverse identity check becomes meaningless.
pub const MIN_DELTA: f64 = 1e-12;

/// Denominators smaller than this are treated as singular.
const SINGULAR_EPS: f64 = 1e-14;

/// Per-entry tolerance of the constructor's M * M^-1 = I verification.
const INVERSE_TOL: f64 = 1e-12;

/// Learnable quantities of one heavy-ball layer with N diagonal channels.
#[derive(Clone, Debug)]
pub struct HeavyBallParams {
    /// Damping (friction) coefficient, > 0.
    pub gamma: f64,
    /// Diagonal of the state matrix A.
    pub a: DiagVec,
    /// Input projection B, one weight per channel.
    pub input_proj: Vec<f64>,
    /// Output projection C, one weight per channel.
    pub output_proj: Vec<f64>,
    /// Direct feedthrough D (defaults to zero).
    pub feedthrough: f64,
    /// Additive bias on the drive (defaults to zero).
    pub bias: Vec<f64>,
}

impl HeavyBallParams {
    pub fn new(gamma: f64, a: DiagVec, input_proj: Vec<f64>, output_proj: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::NonFinite { what: format!("gamma = {gamma} (must be > 0)") });
        }
        if input_proj.len() != n || output_proj.len() != n {
            return Err(Error::WidthMismatch { expected: n, got: input_proj.len() });
        }
        Ok(HeavyBallParams {
            gamma,
            a,
            input_proj,
            output_proj,
            feedthrough: 0.0,
            bias: vec![0.0; n],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }
}

/// One discretized step: the true per-channel 2x2 inverse of M, its Schur
/// factor, and the step size it was built from.
#[derive(Clone, Debug)]
pub struct DiscretizedHeavyBall {
    blocks: Vec<[f64; 4]>,
    pub schur: DiagVec,
    pub delta: f64,
}

impl DiscretizedHeavyBall {
    /// Per-channel inverse blocks, row-major `[m00, m01, m10, m11]`.
    pub fn blocks(&self) -> &[[f64; 4]] {
        &self.blocks
    }

    /// The scan transition: one independent 2x2 block per channel on the
    /// stacked `[z; h]` state.
    pub fn transition(&self) -> StructuredTransition {
        StructuredTransition::HeavyBallBlock(self.blocks.clone())
    }

    /// M^-1 applied to a per-channel drive `[f_z; 0]`: returns the
    /// (z-part, h-part) offsets for channel `i`.
    fn apply_to_drive(&self, i: usize, f_z: f64) -> (f64, f64) {
        (self.blocks[i][0] * f_z, self.blocks[i][2] * f_z)
    }
}

fn invert_step_channel(
    gamma: f64,
    delta: f64,
    a: f64,
    step: Option<usize>,
    channel: usize,
) -> Result<[f64; 4]> {
    let denom = 1.0 + gamma * delta + delta * delta * a;
    if denom.abs() < SINGULAR_EPS {
        return Err(Error::SingularStep { step, channel, denom });
    }
    let s = 1.0 / denom;
    let minv = [s, -delta * a * s, delta * s, (1.0 + gamma * delta) * s];
    // construction-time identity check M * M^-1 = I
    let m = [1.0 + gamma * delta, delta * a, -delta, 1.0];
    let prod = [
        m[0] * minv[0] + m[1] * minv[2],
        m[0] * minv[1] + m[1] * minv[3],
        m[2] * minv[0] + m[3] * minv[2],
        m[2] * minv[1] + m[3] * minv[3],
    ];
    let id = [1.0, 0.0, 0.0, 1.0];
    for k in 0..4 {
        if (prod[k] - id[k]).abs() > INVERSE_TOL {
            return Err(Error::SingularStep { step, channel, denom });
        }
    }
    Ok(minv)
}

/// Backward-Euler discretization with closed-form Schur inverse.
///
/// Fails on `delta < MIN_DELTA` and on any channel whose denominator
/// 1 + gamma*delta + delta^2 a vanishes (the error names the channel).
pub fn discretize_implicit(p: &HeavyBallParams, delta: f64) -> Result<DiscretizedHeavyBall> {
    if !(delta >= MIN_DELTA) {
        return Err(Error::StepTooSmall { delta });
    }
    let mut blocks = Vec::with_capacity(p.state_dim());
    let mut schur = Vec::with_capacity(p.state_dim());
    for (i, &a) in p.a.values.iter().enumerate() {
        let minv = invert_step_channel(p.gamma, delta, a, None, i)?;
        schur.push(minv[0]);
        blocks.push(minv);
    }
    Ok(DiscretizedHeavyBall { blocks, schur: DiagVec { values: schur }, delta })
}

fn read_output(
    p: &HeavyBallParams,
    states: &[Vec<f64>],
    x: &RealSeq,
) -> RealSeq {
    let n = p.state_dim();
    let mut y = Vec::with_capacity(x.len());
    for (step, s) in states.iter().enumerate() {
        let mut acc = p.feedthrough * x.get(step, 0);
        for i in 0..n {
            acc += p.output_proj[i] * s[n + i]; // h block is the second half
        }
        y.push(acc);
    }
    RealSeq::from_scalars(&y).expect("finite outputs")
}

/// Forward pass of the time-invariant system on a single-channel input,
/// starting from s_0 = 0.
pub fn hb_forward(p: &HeavyBallParams, d: &DiscretizedHeavyBall, x: &RealSeq) -> Result<RealSeq> {
    hb_forward_mode(p, d, x, ScanMode::Parallel)
}

/// Forward pass with an explicit scan strategy.
pub fn hb_forward_mode(
    p: &HeavyBallParams,
    d: &DiscretizedHeavyBall,
    x: &RealSeq,
    mode: ScanMode,
) -> Result<RealSeq> {
    if x.channels() != 1 {
        return Err(Error::WidthMismatch { expected: 1, got: x.channels() });
    }
    if d.blocks.len() != p.state_dim() {
        return Err(Error::CacheMismatch { what: "discretization state dimension" });
    }
    let n = p.state_dim();
    let transition = d.transition();
    let elements: Vec<AffineElement> = (0..x.len())
        .map(|step| {
            let xv = x.get(step, 0);
            let mut offset = vec![0.0; 2 * n];
            for i in 0..n {
                let f_z = d.delta * (p.input_proj[i] * xv + p.bias[i]);
                let (oz, oh) = d.apply_to_drive(i, f_z);
                offset[i] = oz;
                offset[n + i] = oh;
            }
            AffineElement { transition: transition.clone(), offset }
        })
        .collect();
    let out = scan(&elements, &vec![0.0; 2 * n], mode)?;
    Ok(read_output(p, &out.states, x))
}

/// Forward pass with per-step (input-conditioned) delta, diagonal, and
/// input projection; gamma, C, D, and bias stay shared. With constant
/// per-step parameters this reduces to [`hb_forward`].
pub fn hb_forward_timevarying(
    p: &HeavyBallParams,
    deltas: &[f64],
    a_seq: &[DiagVec],
    b_seq: &[Vec<f64>],
    x: &RealSeq,
) -> Result<RealSeq> {
    hb_forward_timevarying_mode(p, deltas, a_seq, b_seq, x, ScanMode::Parallel)
}

pub fn hb_forward_timevarying_mode(
    p: &HeavyBallParams,
    deltas: &[f64],
    a_seq: &[DiagVec],
    b_seq: &[Vec<f64>],
    x: &RealSeq,
    mode: ScanMode,
) -> Result<RealSeq> {
    if x.channels() != 1 {
        return Err(Error::WidthMismatch { expected: 1, got: x.channels() });
    }
    let len = x.len();
    if deltas.len() != len || a_seq.len() != len || b_seq.len() != len {
        return Err(Error::WidthMismatch { expected: len, got: deltas.len() });
    }
    let n = p.state_dim();
    let mut elements = Vec::with_capacity(len);
    for step in 0..len {
        let delta = deltas[step];
        if !(delta >= MIN_DELTA) {
            return Err(Error::StepTooSmall { delta });
        }
        if a_seq[step].len() != n || b_seq[step].len() != n {
            return Err(Error::WidthMismatch { expected: n, got: a_seq[step].len() });
        }
        let xv = x.get(step, 0);
        let mut blocks = Vec::with_capacity(n);
        let mut offset = vec![0.0; 2 * n];
        for i in 0..n {
            let minv = invert_step_channel(p.gamma, delta, a_seq[step].values[i], Some(step), i)?;
            let f_z = delta * (b_seq[step][i] * xv + p.bias[i]);
            offset[i] = minv[0] * f_z;
            offset[n + i] = minv[2] * f_z;
            blocks.push(minv);
        }
        elements.push(AffineElement {
            transition: StructuredTransition::HeavyBallBlock(blocks),
            offset,
        });
    }
    let out = scan(&elements, &vec![0.0; 2 * n], mode)?;
    Ok(read_output(p, &out.states, x))
}

/// Largest eigenvalue magnitude of each channel's 2x2 inverse step matrix.
///
/// The eigenvalues of M solve `l^2 - (2 + gamma*delta) l + denom = 0`
/// (trace and determinant of M); the inverse step's spectral radius is the
/// reciprocal of the smallest |l|. Channels with a >= 0 give a radius of
/// at most 1: the characteristic polynomial of M evaluated at 1 equals
/// delta^2 a >= 0 while its vertex lies right of 1, so every eigenvalue
/// of M has magnitude >= 1.
pub fn spectral_radius(p: &HeavyBallParams, delta: f64) -> Result<Vec<f64>> {
    if !(delta >= MIN_DELTA) {
        return Err(Error::StepTooSmall { delta });
    }
    let trace = 2.0 + p.gamma * delta;
    p.a.values
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let det = 1.0 + p.gamma * delta + delta * delta * a;
            if det.abs() < SINGULAR_EPS {
                return Err(Error::SingularStep { step: None, channel: i, denom: det });
            }
            let disc = trace * trace - 4.0 * det;
            let min_abs = if disc >= 0.0 {
                let root = disc.sqrt();
                let l1 = 0.5 * (trace + root);
                let l2 = 0.5 * (trace - root);
                l1.abs().min(l2.abs())
            } else {
                // complex pair: |l|^2 = det (> 0 here since disc < 0)
                det.sqrt()
            };
            if min_abs < SINGULAR_EPS {
                return Err(Error::SingularStep { step: None, channel: i, denom: det });
            }
            Ok(1.0 / min_abs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine_scan::max_state_error;
    use crate::numkit::Rng;

    fn single_channel(gamma: f64, a: f64) -> HeavyBallParams {
        HeavyBallParams::new(gamma, DiagVec::new(vec![a]).unwrap(), vec![1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn schur_inverse_hand_case() {
        // gamma = 1, delta = 1, a = 1: M = [[2,1],[-1,1]], det = 3
        let d = discretize_implicit(&single_channel(1.0, 1.0), 1.0).unwrap();
        assert!((d.schur.values[0] - 1.0 / 3.0).abs() < 1e-15);
        let b = d.blocks()[0];
        let expect = [1.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for k in 0..4 {
            assert!((b[k] - expect[k]).abs() < 1e-15, "entry {k}: {} vs {}", b[k], expect[k]);
        }
    }

    #[test]
    fn schur_inverse_zero_a_case() {
        // gamma = 2, delta = 0.5, a = 0: M = [[2,0],[-0.5,1]]
        let d = discretize_implicit(&single_channel(2.0, 0.0), 0.5).unwrap();
        assert!((d.schur.values[0] - 0.5).abs() < 1e-15);
        let b = d.blocks()[0];
        let expect = [0.5, 0.0, 0.25, 1.0];
        for k in 0..4 {
            assert!((b[k] - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_step_approaches_identity() {
        let d = discretize_implicit(&single_channel(1.0, 5.0), 1e-8).unwrap();
        let b = d.blocks()[0];
        let id = [1.0, 0.0, 0.0, 1.0];
        for k in 0..4 {
            assert!((b[k] - id[k]).abs() < 1e-7, "entry {k} = {}", b[k]);
        }
    }

    #[test]
    fn step_below_minimum_rejected() {
        assert!(matches!(
            discretize_implicit(&single_channel(1.0, 0.0), 1e-300),
            Err(Error::StepTooSmall { .. })
        ));
    }

    #[test]
    fn singular_channel_named() {
        // denom = 1 + gamma*delta + delta^2 a = 0 at a = -(1 + gamma)/1 for delta = 1
        let p = HeavyBallParams::new(
            0.5,
            DiagVec::new(vec![1.0, -1.5]).unwrap(),
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        match discretize_implicit(&p, 1.0) {
            Err(Error::SingularStep { channel, .. }) => assert_eq!(channel, 1),
            other => panic!("expected singular channel, got {other:?}"),
        }
    }

    #[test]
    fn inverse_identity_random_sweep() {
        let mut rng = Rng::new(12021);
        let mut checked = 0;
        while checked < 10_000 {
            let gamma = rng.range(1e-6, 5.0);
            let delta = rng.range(1e-6, 2.0);
            let a = rng.range(-3.0, 5.0);
            let denom = 1.0 + gamma * delta + delta * delta * a;
            if denom.abs() < 1e-2 {
                // too close to the singular slice for the product to be
                // certifiable at 1e-12 in f64
                continue;
            }
            let minv = invert_step_channel(gamma, delta, a, None, 0).unwrap();
            let m = [1.0 + gamma * delta, delta * a, -delta, 1.0];
            let prod = [
                m[0] * minv[0] + m[1] * minv[2],
                m[0] * minv[1] + m[1] * minv[3],
                m[2] * minv[0] + m[3] * minv[2],
                m[2] * minv[1] + m[3] * minv[3],
            ];
            assert!((prod[0] - 1.0).abs() < 1e-12);
            assert!(prod[1].abs() < 1e-12);
            assert!(prod[2].abs() < 1e-12);
            assert!((prod[3] - 1.0).abs() < 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn forward_hand_recurrence() {
        // N=1, gamma=1, delta=1, a=1, B=C=1, D=0: x = [1, 0]
        let p = single_channel(1.0, 1.0);
        let d = discretize_implicit(&p, 1.0).unwrap();
        let x = RealSeq::from_scalars(&[1.0, 0.0]).unwrap();
        let y = hb_forward_mode(&p, &d, &x, ScanMode::Sequential).unwrap();
        assert!((y.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn forward_zero_input_zero_output() {
        let p = single_channel(0.7, 2.0);
        let d = discretize_implicit(&p, 0.3).unwrap();
        let x = RealSeq::zeros(16, 1);
        let y = hb_forward(&p, &d, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_parallel_matches_sequential() {
        let mut rng = Rng::new(500);
        let n = 6;
        let p = HeavyBallParams::new(
            1.3,
            DiagVec::new((0..n).map(|_| rng.range(0.0, 4.0)).collect()).unwrap(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let d = discretize_implicit(&p, 0.25).unwrap();
        let xs: Vec<f64> = (0..300).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = RealSeq::from_scalars(&xs).unwrap();
        let ys = hb_forward_mode(&p, &d, &x, ScanMode::Sequential).unwrap();
        let yp = hb_forward_mode(&p, &d, &x, ScanMode::Parallel).unwrap();
        for n in 0..x.len() {
            let (a, b) = (ys.get(n, 0), yp.get(n, 0));
            let scale = a.abs().max(b.abs()).max(1e-12);
            assert!(((a - b) / scale).abs() < 1e-9);
        }
    }

    #[test]
    fn structured_path_matches_dense_scan() {
        use crate::affine_scan::{scan_sequential, StructuredTransition};
        let mut rng = Rng::new(88);
        let n = 3;
        let p = HeavyBallParams::new(
            0.9,
            DiagVec::new((0..n).map(|_| rng.range(0.0, 3.0)).collect()).unwrap(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let d = discretize_implicit(&p, 0.4).unwrap();
        let xs: Vec<f64> = (0..50).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = RealSeq::from_scalars(&xs).unwrap();

        let transition = d.transition();
        let structured: Vec<AffineElement> = (0..x.len())
            .map(|step| {
                let xv = x.get(step, 0);
                let mut offset = vec![0.0; 2 * n];
                for i in 0..n {
                    let f_z = d.delta * (p.input_proj[i] * xv + p.bias[i]);
                    let (oz, oh) = d.apply_to_drive(i, f_z);
                    offset[i] = oz;
                    offset[n + i] = oh;
                }
                AffineElement { transition: transition.clone(), offset }
            })
            .collect();
        let dense: Vec<AffineElement> = structured
            .iter()
            .map(|e| AffineElement {
                transition: StructuredTransition::Dense {
                    width: 2 * n,
                    rows: e.transition.to_dense(),
                },
                offset: e.offset.clone(),
            })
            .collect();
        let s0 = vec![0.0; 2 * n];
        let a = scan_sequential(&structured, &s0).unwrap();
        let b = scan_sequential(&dense, &s0).unwrap();
        assert!(max_state_error(&a.states, &b.states, 1e-13) < 1e-11);
    }

    #[test]
    fn spectral_radius_real_eigenvalues() {
        // gamma=1, delta=1, a=0: M eigenvalues {1, 2} so radius of M^-1 is 1
        let r = spectral_radius(&single_channel(1.0, 0.0), 1.0).unwrap();
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn spectral_radius_complex_pair() {
        // gamma=0.5, delta=1, a=4: det = 5.5, disc < 0 -> radius 1/sqrt(5.5)
        let r = spectral_radius(&single_channel(0.5, 4.0), 1.0).unwrap();
        assert!((r[0] - 0.42640143271122083).abs() < 1e-10);
    }

    #[test]
    fn stability_for_nonnegative_a() {
        let mut rng = Rng::new(7171);
        for _ in 0..1000 {
            let gamma = rng.range(1e-3, 5.0);
            let delta = rng.range(1e-3, 2.0);
            let a = rng.range(0.0, 6.0);
            let r = spectral_radius(&single_channel(gamma, a), delta).unwrap();
            assert!(r[0] <= 1.0 + 1e-12, "radius {} at g={gamma} d={delta} a={a}", r[0]);
        }
    }

    #[test]
    fn energy_nonincreasing_without_input() {
        // x = 0 and a > 0: the augmented state norm must not grow
        let mut rng = Rng::new(41);
        let n = 4;
        let p = HeavyBallParams::new(
            1.1,
            DiagVec::new((0..n).map(|_| rng.range(0.1, 4.0)).collect()).unwrap(),
            vec![1.0; n],
            vec![1.0; n],
        )
        .unwrap();
        let d = discretize_implicit(&p, 0.5).unwrap();
        let mut s: Vec<f64> = (0..2 * n).map(|_| rng.range(-1.0, 1.0)).collect();
        let transition = d.transition();
        let mut prev = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..200 {
            s = transition.apply(&s);
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= prev + 1e-12, "energy grew: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn timevarying_constant_params_reduce_to_invariant() {
        let mut rng = Rng::new(9);
        let n = 5;
        let p = HeavyBallParams::new(
            0.8,
            DiagVec::new((0..n).map(|_| rng.range(0.0, 3.0)).collect()).unwrap(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let delta = 0.2;
        let d = discretize_implicit(&p, delta).unwrap();
        let xs: Vec<f64> = (0..64).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = RealSeq::from_scalars(&xs).unwrap();
        let y_inv = hb_forward(&p, &d, &x).unwrap();

        let deltas = vec![delta; x.len()];
        let a_seq = vec![p.a.clone(); x.len()];
        let b_seq = vec![p.input_proj.clone(); x.len()];
        let y_tv = hb_forward_timevarying(&p, &deltas, &a_seq, &b_seq, &x).unwrap();
        for step in 0..x.len() {
            let (a, b) = (y_inv.get(step, 0), y_tv.get(step, 0));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn timevarying_matches_stepwise_recurrence() {
        let mut rng = Rng::new(23);
        let n = 3;
        let p = HeavyBallParams::new(
            1.4,
            DiagVec::new(vec![0.0; n]).unwrap(), // overridden per step
            vec![0.0; n],
            (0..n).map(|_| rng.range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let len = 64;
        let deltas: Vec<f64> = (0..len).map(|_| rng.range(0.05, 0.6)).collect();
        let a_seq: Vec<DiagVec> = (0..len)
            .map(|_| DiagVec::new((0..n).map(|_| rng.range(0.0, 3.0)).collect()).unwrap())
            .collect();
        let b_seq: Vec<Vec<f64>> =
            (0..len).map(|_| (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).collect();
        let xs: Vec<f64> = (0..len).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = RealSeq::from_scalars(&xs).unwrap();
        let y = hb_forward_timevarying(&p, &deltas, &a_seq, &b_seq, &x).unwrap();

        // stepwise oracle: explicit 2x2 solves per channel
        let mut z = vec![0.0; n];
        let mut h = vec![0.0; n];
        for step in 0..len {
            let delta = deltas[step];
            for i in 0..n {
                let minv = invert_step_channel(p.gamma, delta, a_seq[step].values[i], None, i)
                    .unwrap();
                let f_z = delta * b_seq[step][i] * xs[step];
                let rhs = [z[i] + f_z, h[i]];
                let zn = minv[0] * rhs[0] + minv[1] * rhs[1];
                let hn = minv[2] * rhs[0] + minv[3] * rhs[1];
                z[i] = zn;
                h[i] = hn;
            }
            let expect: f64 = (0..n).map(|i| p.output_proj[i] * h[i]).sum();
            let got = y.get(step, 0);
            assert!(
                (got - expect).abs() <= 1e-10 * expect.abs().max(1.0),
                "step {step}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn timevarying_rejects_underflow_step() {
        let p = single_channel(1.0, 1.0);
        let x = RealSeq::from_scalars(&[1.0, 1.0]).unwrap();
        let res = hb_forward_timevarying(
            &p,
            &[0.1, 1e-300],
            &[p.a.clone(), p.a.clone()],
            &[vec![1.0], vec![1.0]],
            &x,
        );
        assert!(matches!(res, Err(Error::StepTooSmall { .. })));
    }

    #[test]
    fn bias_drives_states_to_the_fixed_point() {
        // x = 0 with bias b and a > 0: the dynamics settle at z = 0,
        // h = b / a (the stationary point of the damped system)
        let mut p = single_channel(1.5, 2.0);
        p.bias = vec![0.8];
        let d = discretize_implicit(&p, 0.4).unwrap();
        let x = RealSeq::zeros(400, 1);
        let y = hb_forward(&p, &d, &x).unwrap();
        let fixed = 0.8 / 2.0; // b / a, read out through C = 1
        assert!((y.get(399, 0) - fixed).abs() < 1e-10, "y = {}", y.get(399, 0));
    }

    #[test]
    fn feedthrough_adds_scaled_input_to_output() {
        let mut rng = Rng::new(15);
        let xs: Vec<f64> = (0..32).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = RealSeq::from_scalars(&xs).unwrap();
        let p0 = single_channel(1.0, 2.0);
        let mut p2 = single_channel(1.0, 2.0);
        p2.feedthrough = 2.0;
        let d = discretize_implicit(&p0, 0.3).unwrap();
        let y0 = hb_forward(&p0, &d, &x).unwrap();
        let y2 = hb_forward(&p2, &d, &x).unwrap();
        for n in 0..32 {
            assert!((y2.get(n, 0) - y0.get(n, 0) - 2.0 * xs[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_width_is_twice_state_dim() {
        let p = single_channel(1.0, 1.0);
        let d = discretize_implicit(&p, 0.5).unwrap();
        assert_eq!(d.transition().width(), 2 * p.state_dim());
    }
}
