//! Associative-scan engine for affine recurrences s_n = T_n s_{n-1} + f_n.
//!
//! Each step is an [`AffineElement`] (a structured transition plus an
//! additive offset). Under the combine
//!
//! ```text
//! (a1, a2) . (b1, b2) = (b1 a1, b1 a2 + b2)
//! ```
//!
//! elements compose associatively, so the whole trajectory can be
//! evaluated either strictly left-to-right ([`scan_sequential`], the
//! float-semantics oracle) or over a balanced combine tree in logarithmic
//! depth ([`scan_parallel`]).
//!
//! The parallel scan is work-efficient (about 2L combines via pairwise
//! reduction and unwinding) and uses a fixed combine tree: its output is
//! bit-identical across runs and worker counts. Reassociation does move
//! float rounding around, so parallel and sequential trajectories agree
//! to a relative tolerance (1e-9 with absolute floor 1e-12 in the test
//! suites), not bit-for-bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{DiagVec, Scalar};

/// Below this many elements the parallel scan runs its tree single-threaded;
/// the tree (and therefore every float result) is the same either way.
const PAR_THRESHOLD: usize = 256;

// ───────────────────────── transitions ─────────────────────────

/// Kind tag used to request identity elements and to name mismatches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionKind {
    Dense,
    Diagonal,
    MomentumBlock,
    HeavyBallBlock,
}

/// Structured state-transition matrix of an affine step.
///
/// - `Dense`: arbitrary W x W matrix, row-major.
/// - `Diagonal`: diag(d), W = N.
/// - `MomentumBlock`: the 2N x 2N block matrix
///   `[[diag(hidden), diag(cross)], [0, decay * I]]` acting on a stacked
///   `[h; v]` state. A fresh momentum step has `hidden = a_bar`,
///   `cross = beta * I`, `decay = beta`; the form is closed under
///   composition, which keeps every combine O(N).
/// - `HeavyBallBlock`: block-diagonal with one independent 2x2 block per
///   channel, acting on a stacked `[z; h]` state (channel i touches lanes
///   i and N + i). Blocks are row-major `[m00, m01, m10, m11]`.
#[derive(Clone, Debug, PartialEq)]
pub enum StructuredTransition<S = f64> {
    Dense { width: usize, rows: Vec<S> },
    Diagonal(DiagVec<S>),
    MomentumBlock { hidden: DiagVec<S>, cross: DiagVec<S>, decay: S },
    HeavyBallBlock(Vec<[S; 4]>),
}

impl<S: Scalar> StructuredTransition<S> {
    pub fn dense(width: usize, rows: Vec<S>) -> Result<Self> {
        if rows.len() != width * width {
            return Err(Error::WidthMismatch { expected: width * width, got: rows.len() });
        }
        Ok(StructuredTransition::Dense { width, rows })
    }

    /// Fresh momentum step `[[diag(a_bar), beta I], [0, beta I]]`.
    pub fn momentum(a_bar: DiagVec<S>, beta: S) -> Self {
        let n = a_bar.len();
        StructuredTransition::MomentumBlock {
            hidden: a_bar,
            cross: DiagVec { values: vec![beta; n] },
            decay: beta,
        }
    }

    pub fn kind(&self) -> TransitionKind {
        match self {
            StructuredTransition::Dense { .. } => TransitionKind::Dense,
            StructuredTransition::Diagonal(_) => TransitionKind::Diagonal,
            StructuredTransition::MomentumBlock { .. } => TransitionKind::MomentumBlock,
            StructuredTransition::HeavyBallBlock(_) => TransitionKind::HeavyBallBlock,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind() {
            TransitionKind::Dense => "dense",
            TransitionKind::Diagonal => "diagonal",
            TransitionKind::MomentumBlock => "momentum-block",
            TransitionKind::HeavyBallBlock => "heavy-ball-block",
        }
    }

    /// State width the transition acts on.
    pub fn width(&self) -> usize {
        match self {
            StructuredTransition::Dense { width, .. } => *width,
            StructuredTransition::Diagonal(d) => d.len(),
            StructuredTransition::MomentumBlock { hidden, .. } => 2 * hidden.len(),
            StructuredTransition::HeavyBallBlock(blocks) => 2 * blocks.len(),
        }
    }

    /// Matrix-vector product `self * v`.
    pub fn apply(&self, v: &[S]) -> Vec<S> {
        match self {
            StructuredTransition::Dense { width, rows } => {
                let w = *width;
                (0..w)
                    .map(|i| {
                        let row = &rows[i * w..(i + 1) * w];
                        let mut acc = S::zero();
                        for j in 0..w {
                            acc = acc + row[j] * v[j];
                        }
                        acc
                    })
                    .collect()
            }
            StructuredTransition::Diagonal(d) => {
                d.values.iter().zip(v).map(|(&a, &x)| a * x).collect()
            }
            StructuredTransition::MomentumBlock { hidden, cross, decay } => {
                let n = hidden.len();
                let mut out = Vec::with_capacity(2 * n);
                for i in 0..n {
                    out.push(hidden.values[i] * v[i] + cross.values[i] * v[n + i]);
                }
                for i in 0..n {
                    out.push(*decay * v[n + i]);
                }
                out
            }
            StructuredTransition::HeavyBallBlock(blocks) => {
                let n = blocks.len();
                let mut out = vec![S::zero(); 2 * n];
                for (i, m) in blocks.iter().enumerate() {
                    let (z, h) = (v[i], v[n + i]);
                    out[i] = m[0] * z + m[1] * h;
                    out[n + i] = m[2] * z + m[3] * h;
                }
                out
            }
        }
    }

    /// Row-major dense W x W form.
    pub fn to_dense(&self) -> Vec<S> {
        let w = self.width();
        match self {
            StructuredTransition::Dense { rows, .. } => rows.clone(),
            StructuredTransition::Diagonal(d) => {
                let mut m = vec![S::zero(); w * w];
                for i in 0..w {
                    m[i * w + i] = d.values[i];
                }
                m
            }
            StructuredTransition::MomentumBlock { hidden, cross, decay } => {
                let n = hidden.len();
                let mut m = vec![S::zero(); w * w];
                for i in 0..n {
                    m[i * w + i] = hidden.values[i];
                    m[i * w + n + i] = cross.values[i];
                    m[(n + i) * w + n + i] = *decay;
                }
                m
            }
            StructuredTransition::HeavyBallBlock(blocks) => {
                let n = blocks.len();
                let mut m = vec![S::zero(); w * w];
                for (i, b) in blocks.iter().enumerate() {
                    m[i * w + i] = b[0];
                    m[i * w + n + i] = b[1];
                    m[(n + i) * w + i] = b[2];
                    m[(n + i) * w + n + i] = b[3];
                }
                m
            }
        }
    }

    /// Composition `self * earlier` (apply `earlier` first).
    ///
    /// Structured kinds compose with themselves and stay structured; a
    /// `Dense` operand densifies the other side. Mixing two different
    /// structured kinds is a contract violation.
    pub fn compose(&self, earlier: &Self) -> Result<Self> {
        if self.width() != earlier.width() {
            return Err(Error::WidthMismatch { expected: earlier.width(), got: self.width() });
        }
        use StructuredTransition::*;
        match (self, earlier) {
            (Diagonal(b), Diagonal(a)) => Ok(Diagonal(DiagVec {
                values: b.values.iter().zip(&a.values).map(|(&x, &y)| x * y).collect(),
            })),
            (
                MomentumBlock { hidden: pb, cross: qb, decay: rb },
                MomentumBlock { hidden: pa, cross: qa, decay: ra },
            ) => {
                // [[Pb, Qb],[0, rb]] * [[Pa, Qa],[0, ra]]
                //   = [[Pb Pa, Pb Qa + Qb ra],[0, rb ra]]
                let n = pb.len();
                let mut hidden = Vec::with_capacity(n);
                let mut cross = Vec::with_capacity(n);
                for i in 0..n {
                    hidden.push(pb.values[i] * pa.values[i]);
                    cross.push(pb.values[i] * qa.values[i] + qb.values[i] * *ra);
                }
                Ok(MomentumBlock {
                    hidden: DiagVec { values: hidden },
                    cross: DiagVec { values: cross },
                    decay: *rb * *ra,
                })
            }
            (HeavyBallBlock(b), HeavyBallBlock(a)) => Ok(HeavyBallBlock(
                b.iter()
                    .zip(a)
                    .map(|(x, y)| {
                        [
                            x[0] * y[0] + x[1] * y[2],
                            x[0] * y[1] + x[1] * y[3],
                            x[2] * y[0] + x[3] * y[2],
                            x[2] * y[1] + x[3] * y[3],
                        ]
                    })
                    .collect(),
            )),
            (Dense { .. }, _) | (_, Dense { .. }) => {
                let w = self.width();
                let b = self.to_dense();
                let a = earlier.to_dense();
                let mut m = vec![S::zero(); w * w];
                for i in 0..w {
                    for k in 0..w {
                        let bik = b[i * w + k];
                        if bik == S::zero() {
                            continue;
                        }
                        for j in 0..w {
                            m[i * w + j] = m[i * w + j] + bik * a[k * w + j];
                        }
                    }
                }
                Ok(Dense { width: w, rows: m })
            }
            _ => Err(Error::KindMismatch {
                left: self.kind_name(),
                right: earlier.kind_name(),
            }),
        }
    }
}

// ───────────────────────── elements ─────────────────────────

/// One step of a linear recurrence: transition plus additive offset.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineElement<S = f64> {
    pub transition: StructuredTransition<S>,
    pub offset: Vec<S>,
}

impl<S: Scalar> AffineElement<S> {
    pub fn new(transition: StructuredTransition<S>, offset: Vec<S>) -> Result<Self> {
        if transition.width() != offset.len() {
            return Err(Error::WidthMismatch { expected: transition.width(), got: offset.len() });
        }
        Ok(AffineElement { transition, offset })
    }

    pub fn width(&self) -> usize {
        self.offset.len()
    }

    /// Evaluate the affine map at a state: `transition * s + offset`.
    pub fn apply_to(&self, s: &[S]) -> Vec<S> {
        let mut out = self.transition.apply(s);
        for (o, f) in out.iter_mut().zip(&self.offset) {
            *o = *o + *f;
        }
        out
    }
}

/// The scan combine: `(a1, a2) . (b1, b2) = (b1 a1, b1 a2 + b2)`.
///
/// `a` is the earlier element, `b` the later one; the result is the affine
/// map equivalent to applying `a` then `b`.
pub fn combine<S: Scalar>(a: &AffineElement<S>, b: &AffineElement<S>) -> Result<AffineElement<S>> {
    if a.width() != b.width() {
        return Err(Error::WidthMismatch { expected: a.width(), got: b.width() });
    }
    let transition = b.transition.compose(&a.transition)?;
    let mut offset = b.transition.apply(&a.offset);
    for (o, f) in offset.iter_mut().zip(&b.offset) {
        *o = *o + *f;
    }
    Ok(AffineElement { transition, offset })
}

/// Neutral element of the combine: identity transition, zero offset.
///
/// `combine(identity, e) == e` and `combine(e, identity) == e` hold exactly.
pub fn identity_element<S: Scalar>(kind: TransitionKind, width: usize) -> Result<AffineElement<S>> {
    if width == 0 {
        return Err(Error::EmptyInput { what: "identity element width" });
    }
    let transition = match kind {
        TransitionKind::Dense => {
            let mut rows = vec![S::zero(); width * width];
            for i in 0..width {
                rows[i * width + i] = S::one();
            }
            StructuredTransition::Dense { width, rows }
        }
        TransitionKind::Diagonal => StructuredTransition::Diagonal(DiagVec::ones(width)),
        TransitionKind::MomentumBlock => {
            if width % 2 != 0 {
                return Err(Error::WidthMismatch { expected: width + 1, got: width });
            }
            let n = width / 2;
            StructuredTransition::MomentumBlock {
                hidden: DiagVec::ones(n),
                cross: DiagVec { values: vec![S::zero(); n] },
                decay: S::one(),
            }
        }
        TransitionKind::HeavyBallBlock => {
            if width % 2 != 0 {
                return Err(Error::WidthMismatch { expected: width + 1, got: width });
            }
            let n = width / 2;
            StructuredTransition::HeavyBallBlock(vec![
                [S::one(), S::zero(), S::zero(), S::one()];
                n
            ])
        }
    };
    Ok(AffineElement { transition, offset: vec![S::zero(); width] })
}

// ───────────────────────── scans ─────────────────────────

/// Which evaluation strategy a forward pass threads its recurrence through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    Sequential,
    Parallel,
}

/// Trajectory of a scan: `states[n] = s_{n+1}` for elements indexed from 0.
#[derive(Clone, Debug)]
pub struct ScanOutput<S = f64> {
    pub states: Vec<Vec<S>>,
    /// Running transition compositions `T_n ... T_1`, when requested.
    pub composed: Option<Vec<StructuredTransition<S>>>,
    /// Height (in nodes, leaves counting as 1) of the combine tree that
    /// produced the result: `ceil(log2 L) + 1` for the parallel scan,
    /// L for the strictly sequential chain.
    pub combine_depth: usize,
}

fn check_scan_input<S: Scalar>(elements: &[AffineElement<S>], s0: &[S]) -> Result<usize> {
    let first = elements.first().ok_or(Error::EmptyInput { what: "scan elements" })?;
    let w = first.width();
    if s0.len() != w {
        return Err(Error::WidthMismatch { expected: w, got: s0.len() });
    }
    for e in elements {
        if e.width() != w {
            return Err(Error::WidthMismatch { expected: w, got: e.width() });
        }
    }
    Ok(w)
}

/// Exact left-to-right evaluation; the float-semantics oracle for
/// [`scan_parallel`].
pub fn scan_sequential<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
) -> Result<ScanOutput<S>> {
    scan_sequential_impl(elements, s0, false)
}

/// Sequential scan that also tracks the running transition products.
pub fn scan_sequential_composed<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
) -> Result<ScanOutput<S>> {
    scan_sequential_impl(elements, s0, true)
}

fn scan_sequential_impl<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
    track: bool,
) -> Result<ScanOutput<S>> {
    check_scan_input(elements, s0)?;
    let mut states = Vec::with_capacity(elements.len());
    let mut composed = if track { Some(Vec::with_capacity(elements.len())) } else { None };
    let mut cur = s0.to_vec();
    let mut running: Option<StructuredTransition<S>> = None;
    for e in elements {
        cur = e.apply_to(&cur);
        states.push(cur.clone());
        if let Some(comp) = composed.as_mut() {
            let next = match &running {
                None => e.transition.clone(),
                Some(r) => e.transition.compose(r)?,
            };
            comp.push(next.clone());
            running = Some(next);
        }
    }
    Ok(ScanOutput { states, composed, combine_depth: elements.len() })
}

/// Inclusive prefix combine over the elements: `out[k] = e_0 . e_1 ... e_k`.
///
/// Work-efficient pairwise reduction: combine adjacent pairs, recurse on
/// the half-length sequence, then unwind even positions with one extra
/// combine each (about 2L combines total). The recursion defines a fixed
/// combine tree of node-height `ceil(log2 L) + 1`, so results do not
/// depend on thread count or scheduling.
///
/// Returns the prefixes and the tree height.
pub fn prefix_combine<S: Scalar>(
    elements: &[AffineElement<S>],
) -> Result<(Vec<AffineElement<S>>, usize)> {
    let n = elements.len();
    if n == 0 {
        return Err(Error::EmptyInput { what: "scan elements" });
    }
    if n == 1 {
        return Ok((vec![elements[0].clone()], 1));
    }
    let pairs = n / 2;
    let reduced: Vec<AffineElement<S>> = if n >= PAR_THRESHOLD {
        let mut v: Vec<AffineElement<S>> = (0..pairs)
            .into_par_iter()
            .map(|i| combine(&elements[2 * i], &elements[2 * i + 1]))
            .collect::<Result<_>>()?;
        if n % 2 == 1 {
            v.push(elements[n - 1].clone());
        }
        v
    } else {
        let mut v = Vec::with_capacity(pairs + (n % 2));
        for i in 0..pairs {
            v.push(combine(&elements[2 * i], &elements[2 * i + 1])?);
        }
        if n % 2 == 1 {
            v.push(elements[n - 1].clone());
        }
        v
    };

    let (rec, rec_depth) = prefix_combine(&reduced)?;

    // Unwind: odd positions come straight from the recursion, even
    // positions need one combine with the preceding recursion prefix.
    let fill = |k: usize| -> Result<AffineElement<S>> {
        if k == 0 {
            Ok(elements[0].clone())
        } else if k % 2 == 1 {
            Ok(rec[k / 2].clone())
        } else if k == n - 1 && n % 2 == 1 {
            // the unpaired trailing element is the last entry of `reduced`
            Ok(rec[rec.len() - 1].clone())
        } else {
            combine(&rec[k / 2 - 1], &elements[k])
        }
    };
    let out: Vec<AffineElement<S>> = if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(fill).collect::<Result<_>>()?
    } else {
        (0..n).map(fill).collect::<Result<_>>()?
    };
    Ok((out, rec_depth + 1))
}

/// Logarithmic-depth scan. States match [`scan_sequential`] to 1e-9
/// relative (absolute floor 1e-12); output is deterministic for a fixed
/// input regardless of parallelism degree.
pub fn scan_parallel<S: Scalar>(elements: &[AffineElement<S>], s0: &[S]) -> Result<ScanOutput<S>> {
    scan_parallel_impl(elements, s0, false)
}

/// Parallel scan that also returns the running transition products.
pub fn scan_parallel_composed<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
) -> Result<ScanOutput<S>> {
    scan_parallel_impl(elements, s0, true)
}

fn scan_parallel_impl<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
    track: bool,
) -> Result<ScanOutput<S>> {
    check_scan_input(elements, s0)?;
    let (prefixes, depth) = prefix_combine(elements)?;
    let states: Vec<Vec<S>> = if elements.len() >= PAR_THRESHOLD {
        prefixes.par_iter().map(|p| p.apply_to(s0)).collect()
    } else {
        prefixes.iter().map(|p| p.apply_to(s0)).collect()
    };
    let composed = track.then(|| prefixes.into_iter().map(|p| p.transition).collect());
    Ok(ScanOutput { states, composed, combine_depth: depth })
}

/// Dispatch helper used by the forward passes.
pub fn scan<S: Scalar>(
    elements: &[AffineElement<S>],
    s0: &[S],
    mode: ScanMode,
) -> Result<ScanOutput<S>> {
    match mode {
        ScanMode::Sequential => scan_sequential(elements, s0),
        ScanMode::Parallel => scan_parallel(elements, s0),
    }
}

/// Combine-tree height of the parallel scan for a given length:
/// 1 for L = 1, otherwise `ceil(log2 L) + 1`.
pub fn parallel_combine_depth(len: usize) -> usize {
    if len <= 1 {
        len
    } else {
        (usize::BITS - (len - 1).leading_zeros()) as usize + 1
    }
}

/// Worst relative error between two state trajectories, with an absolute
/// floor below which differences are ignored.
pub fn max_state_error<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>], abs_floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            let diff = (x - y).magnitude();
            if diff <= abs_floor {
                continue;
            }
            let scale = x.magnitude().max(y.magnitude()).max(abs_floor);
            worst = worst.max(diff / scale);
        }
    }
    worst
}
