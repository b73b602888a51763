//! Foundation numeric types shared by every kernel: time-major real
//! sequences, explicit (re, im) complex values, diagonal vectors, and a
//! deterministic counter-based RNG.
//!
//! Everything runs in f64. The verification suites work at tolerances of
//! 1e-9..1e-12, which single precision cannot reach.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

// ───────────────────────── scalar abstraction ─────────────────────────

/// Field element of a scan: either `f64` or [`ComplexVal`].
///
/// The affine-scan engine is generic over this trait so the same combine
/// and recurrence code serves real and complex momentum.
pub trait Scalar:
    Copy
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_re(x: f64) -> Self;
    /// Modulus. For `f64` this is `abs`.
    fn magnitude(self) -> f64;
    fn is_finite_val(self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_re(x: f64) -> Self {
        x
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
    fn is_finite_val(self) -> bool {
        self.is_finite()
    }
}

// ───────────────────────── complex values ─────────────────────────

/// Complex number stored as an explicit (re, im) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComplexVal {
    pub re: f64,
    pub im: f64,
}

impl ComplexVal {
    pub const ZERO: ComplexVal = ComplexVal { re: 0.0, im: 0.0 };
    pub const ONE: ComplexVal = ComplexVal { re: 1.0, im: 0.0 };
    pub const I: ComplexVal = ComplexVal { re: 0.0, im: 1.0 };

    pub fn new(re: f64, im: f64) -> Self {
        ComplexVal { re, im }
    }

    /// `mag * e^{i*phase}`.
    pub fn from_polar(mag: f64, phase: f64) -> Self {
        ComplexVal { re: mag * phase.cos(), im: mag * phase.sin() }
    }

    pub fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn conj(self) -> Self {
        ComplexVal { re: self.re, im: -self.im }
    }

    pub fn scale(self, s: f64) -> Self {
        ComplexVal { re: self.re * s, im: self.im * s }
    }
}

/// (a.re*b.re - a.im*b.im, a.re*b.im + a.im*b.re).
pub fn complex_mul(a: ComplexVal, b: ComplexVal) -> ComplexVal {
    ComplexVal {
        re: a.re * b.re - a.im * b.im,
        im: a.re * b.im + a.im * b.re,
    }
}

impl Add for ComplexVal {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ComplexVal { re: self.re + o.re, im: self.im + o.im }
    }
}

impl Sub for ComplexVal {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        ComplexVal { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Mul for ComplexVal {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        complex_mul(self, o)
    }
}

impl Neg for ComplexVal {
    type Output = Self;
    fn neg(self) -> Self {
        ComplexVal { re: -self.re, im: -self.im }
    }
}

impl Scalar for ComplexVal {
    fn zero() -> Self {
        ComplexVal::ZERO
    }
    fn one() -> Self {
        ComplexVal::ONE
    }
    fn from_re(x: f64) -> Self {
        ComplexVal { re: x, im: 0.0 }
    }
    fn magnitude(self) -> f64 {
        ComplexVal::magnitude(self)
    }
    fn is_finite_val(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

// ───────────────────────── sequences ─────────────────────────

/// Time-major L x D matrix of 64-bit reals: `row(n)` is the length-D
/// sample at step n.
#[derive(Clone, Debug, PartialEq)]
pub struct RealSeq {
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RealSeq {
    /// Validates L >= 1, D >= 1, and that every entry is finite.
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(Error::EmptyInput { what: "RealSeq dimensions" });
        }
        if data.len() != len * channels {
            return Err(Error::WidthMismatch { expected: len * channels, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "RealSeq entries".into() });
        }
        Ok(RealSeq { len, channels, data })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        RealSeq { len, channels, data: vec![0.0; len * channels] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * channels);
        for r in rows {
            if r.len() != channels {
                return Err(Error::WidthMismatch { expected: channels, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        RealSeq::new(rows.len(), channels, data)
    }

    /// Single-channel sequence from a slice of samples.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        RealSeq::new(xs.len(), 1, xs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // L >= 1 by construction
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn get(&self, n: usize, d: usize) -> f64 {
        self.data[n * self.channels + d]
    }

    pub fn set(&mut self, n: usize, d: usize, v: f64) {
        self.data[n * self.channels + d] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Contiguous slice of rows \[start, start+count).
    pub fn slice_rows(&self, start: usize, count: usize) -> RealSeq {
        let d = self.channels;
        RealSeq {
            len: count,
            channels: d,
            data: self.data[start * d..(start + count) * d].to_vec(),
        }
    }
}

// ───────────────────────── diagonal vectors ─────────────────────────

/// Length-N vector interpreted as a diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagVec<S = f64> {
    pub values: Vec<S>,
}

impl<S: Scalar> DiagVec<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput { what: "DiagVec" });
        }
        if values.iter().any(|v| !v.is_finite_val()) {
            return Err(Error::NonFinite { what: "DiagVec entries".into() });
        }
        Ok(DiagVec { values })
    }

    pub fn ones(n: usize) -> Self {
        DiagVec { values: vec![S::one(); n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl DiagVec<f64> {
    /// Lift a real diagonal into the complex plane (zero imaginary part).
    pub fn to_complex(&self) -> DiagVec<ComplexVal> {
        DiagVec { values: self.values.iter().map(|&v| ComplexVal::new(v, 0.0)).collect() }
    }
}

/// values\[i\] = exp(scale * d\[i\]).
pub fn elementwise_exp(d: &DiagVec, scale: f64) -> DiagVec {
    DiagVec { values: d.values.iter().map(|&v| (scale * v).exp()).collect() }
}

// ───────────────────────── activations ─────────────────────────

/// Overflow-safe log(1 + exp(x)).
///
/// For large x the naive form overflows, so the tail switches to
/// x + log1p(exp(-x)); both branches are exact to f64 rounding.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: returns t with softplus(t) = y, y > 0.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ───────────────────────── deterministic RNG ─────────────────────────

/// Deterministic counter-based generator (splitmix64 over an advancing
/// counter). Identical seeds produce identical streams, which every
/// stochastic operation in the crate relies on for reproducibility.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Log-uniform in [lo, hi), lo > 0.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.range(lo.ln(), hi.ln()).exp()
    }

    /// Standard normal via Box-Muller; the second deviate is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln well-defined
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, n) via the widening-multiply trick.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Derive an independent substream keyed by `tag`.
    pub fn fork(&mut self, tag: u64) -> Rng {
        Rng::new(self.next_u64() ^ tag.wrapping_mul(0xA076_1D64_78BD_642F))
    }
}
