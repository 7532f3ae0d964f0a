//! Brute-force and closed-form references, kept deliberately independent of
//! the solver's code paths: the dense routines here are written from scratch
//! (Gauss-Jordan and Gaussian elimination) and share nothing with
//! [`crate::mat::Matrix::inverse`], so agreement between solver and oracle is
//! evidence rather than tautology.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::chain::{finite_prefix, level_offsets, BlockGenerator, ChainError, LevelVector};
use crate::mat::Matrix;
use crate::models::{AffineMatrix, ExplicitChain, RepeatRule};
use crate::solver::SolverState;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    Chain(ChainError),
    /// The assembled prefix is numerically singular.
    Singular { size: usize },
    /// Closed form requested outside its stability region.
    Unstable { utilization: f64 },
    /// The supplied reference vector does not span past the state's level.
    ReferenceTooShort { needed: usize, got: usize },
    BadInput { reason: &'static str },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::Chain(e) => write!(f, "{e}"),
            OracleError::Singular { size } => write!(f, "dense prefix of size {size} is singular"),
            OracleError::Unstable { utilization } => {
                write!(f, "closed form needs utilization < 1, got {utilization}")
            }
            OracleError::ReferenceTooShort { needed, got } => {
                write!(f, "reference vector spans {got} levels, need more than {needed}")
            }
            OracleError::BadInput { reason } => write!(f, "bad oracle input: {reason}"),
        }
    }
}

impl core::error::Error for OracleError {}

impl From<ChainError> for OracleError {
    fn from(e: ChainError) -> Self {
        OracleError::Chain(e)
    }
}

/// Stationary vector of a linearly augmented truncation, solved densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolveOutput {
    pub pi_hat: LevelVector,
    /// `max_i |(pi_hat * augmented_prefix)_i|` after assembly; small values
    /// certify the solve.
    pub residual_norm: f64,
}

/// Gaussian elimination with partial pivoting, solving `a^T x = rhs`.
///
/// Written independently of `Matrix::inverse`; operates on an augmented
/// column and eliminates forward, then substitutes backward.
fn solve_transposed(a: &Matrix, rhs: &[f64]) -> Result<Vec<f64>, OracleError> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    debug_assert_eq!(n, rhs.len());
    // Work on the transpose so the solve targets x A = rhs'.
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            m[j * n + i] = a.get(i, j);
        }
    }
    let mut b = rhs.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, &x| acc.max(libm::fabs(x)));

    for col in 0..n {
        let (mut pivot_row, mut pivot_abs) = (col, libm::fabs(m[col * n + col]));
        for r in col + 1..n {
            let v = libm::fabs(m[r * n + col]);
            if v > pivot_abs {
                pivot_row = r;
                pivot_abs = v;
            }
        }
        if pivot_abs <= 1e-13 * scale {
            return Err(OracleError::Singular { size: n });
        }
        if pivot_row != col {
            for j in col..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for j in col + 1..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= m[i * n + j] * b[j];
        }
        b[i] = s / m[i * n + i];
    }
    Ok(b)
}

/// Full inverse by Gauss-Jordan elimination on `[A | I]` with partial
/// pivoting; independent of both `Matrix::inverse` and [`solve_transposed`].
fn gauss_jordan_inverse(a: &Matrix) -> Result<Matrix, OracleError> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let width = 2 * n;
    let mut t = vec![0.0f64; n * width];
    for i in 0..n {
        for j in 0..n {
            t[i * width + j] = a.get(i, j);
        }
        t[i * width + n + i] = 1.0;
    }
    let scale = a.max_abs();
    for col in 0..n {
        let (mut pivot_row, mut pivot_abs) = (col, libm::fabs(t[col * width + col]));
        for r in col + 1..n {
            let v = libm::fabs(t[r * width + col]);
            if v > pivot_abs {
                pivot_row = r;
                pivot_abs = v;
            }
        }
        if pivot_abs <= 1e-13 * scale {
            return Err(OracleError::Singular { size: n });
        }
        if pivot_row != col {
            for j in 0..width {
                t.swap(col * width + j, pivot_row * width + j);
            }
        }
        let pivot = t[col * width + col];
        for j in 0..width {
            t[col * width + j] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = t[r * width + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                t[r * width + j] -= f * t[col * width + j];
            }
        }
    }
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inv.set(i, j, t[i * width + n + j]);
        }
    }
    Ok(inv)
}

/// Stationary vector of the truncation over levels `0..=max_level` whose lost
/// outflow is redirected by `augmentation` (a probability row over the whole
/// truncated state space, mass anywhere): solves the defining linear system
/// densely, with no recursion involved.
pub fn dense_augmented_solve(
    chain: &(impl BlockGenerator + ?Sized),
    max_level: usize,
    augmentation: &[f64],
) -> Result<DenseSolveOutput, OracleError> {
    let offs = level_offsets(chain, max_level)?;
    let total = offs[max_level + 1];
    if augmentation.len() != total {
        return Err(OracleError::BadInput { reason: "augmentation width must match the prefix" });
    }
    if augmentation.iter().any(|&a| a < 0.0)
        || libm::fabs(augmentation.iter().sum::<f64>() - 1.0) > 1e-12
    {
        return Err(OracleError::BadInput { reason: "augmentation must be a probability vector" });
    }
    let q = finite_prefix(chain, max_level)?;
    let neg_q = q.neg();
    // x (-Q) = augmentation, then normalize x to a probability vector.
    let x = solve_transposed(&neg_q, augmentation)?;
    let mass: f64 = x.iter().sum();
    let pi: Vec<f64> = x.iter().map(|&v| v / mass).collect();

    // Residual against the augmented truncation Q - (Q e) augmentation.
    let deficit: Vec<f64> = (0..total).map(|i| q.row(i).iter().sum::<f64>()).collect();
    let mut residual_norm = 0.0f64;
    for j in 0..total {
        let mut acc = 0.0;
        for i in 0..total {
            acc += pi[i] * (q.get(i, j) - deficit[i] * augmentation[j]);
        }
        residual_norm = residual_norm.max(libm::fabs(acc));
    }

    let mut segments = Vec::with_capacity(max_level + 1);
    for k in 0..=max_level {
        segments.push(pi[offs[k]..offs[k + 1]].to_vec());
    }
    let pi_hat = LevelVector::probability(segments)
        .map_err(|_| OracleError::BadInput { reason: "solve produced a non-probability vector" })?;
    Ok(DenseSolveOutput { pi_hat, residual_norm })
}

/// The full matrix of expected sojourn times before first passage above
/// `max_level`: the inverse of the negated prefix, entry `(s, t)` read as the
/// expected total time in flattened state `t` starting from `s`. Entries in
/// `[-1e-12, 0)` are clipped to zero.
pub fn censored_expected_sojourn(
    chain: &(impl BlockGenerator + ?Sized),
    max_level: usize,
) -> Result<Matrix, OracleError> {
    let q = finite_prefix(chain, max_level)?;
    let mut inv = gauss_jordan_inverse(&q.neg())?;
    inv.clip_negative(1e-12);
    Ok(inv)
}

/// Stationary probability of level `k` in the scalar birth-death chain:
/// `(1 - rho) rho^k`.
pub fn mm1_closed_form(arrival_rate: f64, service_rate: f64, level: usize) -> Result<f64, OracleError> {
    let rho = arrival_rate / service_rate;
    if !(rho < 1.0) {
        return Err(OracleError::Unstable { utilization: rho });
    }
    Ok((1.0 - rho) * libm::pow(rho, level as f64))
}

/// Stationary probability of `level` busy servers in the infinite-server
/// queue with Poisson input: `e^{-a} a^k / k!` with `a = lambda/mu`,
/// accumulated iteratively to avoid factorial overflow.
pub fn mminf_poisson(arrival_rate: f64, service_rate: f64, level: usize) -> f64 {
    let a = arrival_rate / service_rate;
    let mut p = libm::exp(-a);
    for k in 1..=level {
        p *= a / k as f64;
    }
    p
}

/// Consistency check on the top-level balance identity: the flow that the
/// censored top block returns, `pi_n * top_block^{-1}`, must equal the
/// downward flow entering level `n` from above, `pi_{n+1} Q_{n+1,n}`.
/// Returns the largest absolute deviation; `pi_ref` must span beyond the
/// state's level and should come from a much deeper reference solve.
pub fn t_star_identity_check(
    chain: &(impl BlockGenerator + ?Sized),
    state: &SolverState,
    pi_ref: &LevelVector,
) -> Result<f64, OracleError> {
    let n = state.level();
    if pi_ref.num_levels() <= n + 1 {
        return Err(OracleError::ReferenceTooShort { needed: n + 1, got: pi_ref.num_levels() });
    }
    let inv_top = gauss_jordan_inverse(state.top_block())?;
    let lhs = crate::mat::row_mul(pi_ref.segment(n), &inv_top);
    // Hessenberg structure: only level n+1 reaches level n from above.
    let down = crate::chain::checked_block(chain, n + 1, n)?;
    let rhs = match down {
        Some(b) => crate::mat::row_mul(pi_ref.segment(n + 1), &b),
        None => vec![0.0; lhs.len()],
    };
    let mut dev = 0.0f64;
    for (a, b) in lhs.iter().zip(&rhs) {
        dev = dev.max(libm::fabs(a - b));
    }
    Ok(dev)
}

// ---------------------------------------------------------------------------
// Seeded random ergodic chains for the verification corpus
// ---------------------------------------------------------------------------

/// Deterministic 64-bit generator (splitmix64), so the corpus is identical
/// across platforms without pulling in an RNG dependency.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in `0..bound`.
    pub fn next_below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }
}

/// Levels stored by [`random_ergodic_generator`]; callers must keep queries
/// within this prefix.
pub const RANDOM_CHAIN_LEVELS: usize = 17;

/// Draws a random ergodic chain with level widths in `1..=3` and upper
/// bandwidth 1 or 2: sparse nonnegative rates, a within-level cycle so every
/// phase communicates, guaranteed climb and descent rates from every phase
/// (descent mildly dominant, keeping the prefix well conditioned), diagonals
/// completed to zero row sums. The seed fully determines the chain.
pub fn random_ergodic_generator(seed: u64) -> ExplicitChain {
    let mut rng = SplitMix64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let levels = RANDOM_CHAIN_LEVELS;
    let band = 1 + rng.next_below(2);
    let dims: Vec<usize> = (0..=levels).map(|_| 1 + rng.next_below(3)).collect();

    let mut dense: BTreeMap<(usize, usize), Matrix> = BTreeMap::new();
    for k in 0..=levels {
        let lo = k.saturating_sub(1);
        let hi = (k + band).min(levels);
        for l in lo..=hi {
            let mut m = Matrix::zeros(dims[k], dims[l]);
            let scale = if l > k {
                0.4 / band as f64
            } else if l < k {
                0.4
            } else {
                1.0
            };
            for i in 0..dims[k] {
                for j in 0..dims[l] {
                    if rng.next_f64() < 0.6 {
                        m.set(i, j, scale * rng.next_f64());
                    }
                }
            }
            dense.insert((k, l), m);
        }
        // Within-level cycle keeps phases communicating.
        for i in 0..dims[k] {
            let j = (i + 1) % dims[k];
            if j != i {
                let m = dense.get_mut(&(k, k)).unwrap();
                m.add_to(i, j, 0.5);
            }
        }
        // Every phase descends (dominant) and climbs (moderate).
        if k >= 1 {
            let m = dense.get_mut(&(k, k - 1)).unwrap();
            for i in 0..dims[k] {
                m.add_to(i, i % dims[k - 1], 0.8);
            }
        }
        if k < levels {
            let m = dense.get_mut(&(k, k + 1)).unwrap();
            for i in 0..dims[k] {
                m.add_to(i, i % dims[k + 1], 0.5);
            }
        }
    }
    // Diagonal completion for conservative rows.
    for k in 0..=levels {
        let mut row_sums = vec![0.0; dims[k]];
        for l in k.saturating_sub(1)..=(k + band).min(levels) {
            let m = &dense[&(k, l)];
            for (i, s) in row_sums.iter_mut().enumerate() {
                *s += m.row(i).iter().sum::<f64>();
            }
        }
        let m = dense.get_mut(&(k, k)).unwrap();
        for (i, s) in row_sums.iter().enumerate() {
            m.add_to(i, i, -s);
        }
    }

    let blocks: BTreeMap<(usize, usize), AffineMatrix> = dense
        .into_iter()
        .map(|(key, m)| (key, AffineMatrix::constant(&m)))
        .collect();
    let none: Option<RepeatRule> = None;
    ExplicitChain::new(dims, blocks, none).expect("construction is well formed by design")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::validate_generator;
    use crate::models;

    #[test]
    fn closed_forms_match_hand_values() {
        assert!((mm1_closed_form(1.0, 2.0, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((mm1_closed_form(1.0, 2.0, 3).unwrap() - 0.0625).abs() < 1e-15);
        assert!(mm1_closed_form(2.0, 1.0, 0).is_err());
        assert!((mminf_poisson(2.0, 1.0, 0) - libm::exp(-2.0)).abs() < 1e-15);
        assert!((mminf_poisson(2.0, 1.0, 2) - 2.0 * libm::exp(-2.0)).abs() < 1e-15);
        assert!((mminf_poisson(1e-12, 1.0, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn censored_sojourn_of_two_level_birth_death() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let x = censored_expected_sojourn(&chain, 1).unwrap();
        // Inverse of [[1,-1],[-2,3]]; checked by multiplying back below.
        assert!((x.get(0, 0) - 3.0).abs() < 1e-12);
        assert!((x.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((x.get(1, 0) - 2.0).abs() < 1e-12);
        assert!((x.get(1, 1) - 1.0).abs() < 1e-12);
        let neg_q = finite_prefix(&chain, 1).unwrap().neg();
        let prod = neg_q.mul(&x);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_solve_on_a_single_state_is_trivial() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let out = dense_augmented_solve(&chain, 0, &[1.0]).unwrap();
        assert_eq!(out.pi_hat.segment(0), &[1.0]);
    }

    #[test]
    fn dense_solve_two_levels_by_hand() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let out = dense_augmented_solve(&chain, 1, &[0.0, 1.0]).unwrap();
        assert!((out.pi_hat.segment(0)[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((out.pi_hat.segment(1)[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!(out.residual_norm < 1e-12);
    }

    #[test]
    fn dense_solve_rejects_bad_augmentations() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        assert!(dense_augmented_solve(&chain, 1, &[1.0]).is_err());
        assert!(dense_augmented_solve(&chain, 1, &[0.7, 0.7]).is_err());
    }

    #[test]
    fn dense_solve_detects_singular_prefixes() {
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        let mut b = BTreeMap::new();
        b.insert(
            (0, 0),
            AffineMatrix::constant(&Matrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]])),
        );
        let chain = ExplicitChain::new(vec![2], b, None).unwrap();
        assert!(matches!(
            dense_augmented_solve(&chain, 0, &[0.5, 0.5]),
            Err(OracleError::Singular { .. })
        ));
    }

    #[test]
    fn random_chains_validate_and_stay_within_the_prefix() {
        for seed in 0..5 {
            let chain = random_ergodic_generator(seed);
            let report = validate_generator(&chain, RANDOM_CHAIN_LEVELS).unwrap();
            assert!(report.is_clean(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn splitmix_is_reproducible() {
        let mut a = SplitMix64(42);
        let mut b = SplitMix64(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
