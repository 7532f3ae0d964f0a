//! Stationary distributions of ergodic continuous-time Markov chains whose
//! generator is in upper block-Hessenberg form (level-dependent M/G/1-type
//! chains).
//!
//! The solver truncates the generator at a level `n`, restores conservativity
//! by redirecting the truncated outflow into the last block column through an
//! augmentation distribution, and computes the stationary vector of that
//! truncation from censored-sojourn recursions that are *updated in place*
//! when `n` grows: raising the truncation level never recomputes work already
//! done. The augmentation distribution is re-optimized at every checkpoint by
//! a closed-form linear-fractional program driven by a Foster-Lyapunov drift
//! certificate, which makes the sequence of truncation approximations
//! converge to the true stationary vector (a fixed augmentation choice can
//! fail to converge; see [`models::counterexample_generator`]).
//!
//! Module map:
//! - [`mat`]: small dense matrix kernel (row-major, pivoted inversion).
//! - [`chain`]: the lazy block-generator abstraction, structural validation,
//!   finite prefixes, level-partitioned vectors.
//! - [`models`]: concrete chains (BMAP/M/∞ queue, M/M/s retrial queue, a
//!   convergence counterexample, explicit/tabulated chains).
//! - [`solver`]: censored-sojourn recursions, augmentation optimization, the
//!   sequential update loop.
//! - [`bounds`]: drift certificates, residual diagnostics, the computable
//!   total-variation error bound.
//! - [`oracle`]: independent brute-force references used to verify the solver
//!   at desk scale.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature is
//! on by default and only gates conveniences.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bounds;
pub mod chain;
pub mod mat;
pub mod models;
pub mod oracle;
pub mod solver;

pub use bounds::{DriftCertificate, DriftReport, Lyapunov, StateSet};
pub use chain::{Bandwidth, BlockGenerator, ChainError, LevelVector, ValidationReport};
pub use mat::Matrix;
pub use solver::{SolveResult, SolverError, SolverState, TruncationSchedule};
