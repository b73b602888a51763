//! Momentum-augmented selective state-space kernels.
//!
//! This crate implements a family of linear-recurrence sequence layers —
//! a selective (input-conditioned) diagonal SSM plus heavy-ball, complex,
//! and Adam-style momentum variants — together with the machinery needed
//! to run and verify them end to end:
//!
//! - [`affine_scan`]: associative combine for affine recurrences with
//!   sequential (oracle) and work-efficient parallel evaluation.
//! - [`heavyball_s4`]: second-order (damped, inertial) state dynamics
//!   discretized by an implicit Euler step with a closed-form
//!   Schur-complement inverse, and a spectral stability analyzer.
//! - [`selective_ssm`]: input-dependent projections, zero-order-hold
//!   discretization, forward scan, and a hand-derived analytic backward.
//! - [`momentum_variants`]: heavy-ball, complex-valued, and
//!   variance-normalized momentum layered on the selective recurrence.
//! - [`gradient_lab`]: Jacobian-product diagnostics, gradient-norm
//!   heatmaps over training, and the central-difference oracle every
//!   backward pass is checked against.
//! - [`har_pipeline`]: a windowed six-channel classification pipeline
//!   (conv front-end, stacked SSM blocks, pooled head) with a
//!   deterministic Adam trainer and synthetic long-range recall tasks.
//! - [`cli`]: the `mssm` command-line entry point (benchmarks, property
//!   checks, gradient-flow runs, training, hyperparameter sweeps).
//!
//! Determinism is a design rule throughout: every stochastic path is fed
//! by an explicit-seed counter RNG, and the parallel scan uses a fixed
//! combine tree so results are bit-identical across worker counts.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability.

pub mod affine_scan;
pub mod cli;
pub mod error;
pub mod gradient_lab;
pub mod har_pipeline;
pub mod heavyball_s4;
pub mod momentum_variants;
pub mod numkit;
pub mod selective_ssm;

pub use error::{Error, Result};
pub use numkit::{ComplexVal, DiagVec, RealSeq, Rng};
