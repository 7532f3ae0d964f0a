//! The sequential-update solver.
//!
//! For a truncation level `n`, censoring the chain on levels `0..=n` (watch
//! it only until it first climbs above `n`) yields a family of sojourn
//! blocks: `sojourn[k][(i, j)]` is the expected total time spent in phase `j`
//! of level `k` before the first passage above `n`, starting from phase `i`
//! of level `n`. Together with the expected first-passage time `exit_time`,
//! these blocks give the stationary vector of the truncated generator whose
//! lost outflow is redirected into the last block column through an
//! augmentation distribution: segment `k` is `alpha * sojourn[k] / (alpha *
//! exit_time)`.
//!
//! The point of the recursion is that raising `n` by one updates all blocks
//! with a single small inversion and one left-multiplication per level, so a
//! solve that stops at level 300 has paid for level 300 once, not 30 times.
//!
//! The augmentation distribution is re-chosen at every checkpoint: the
//! total-variation error bound is a linear-fractional function of `alpha`,
//! minimized in closed form by an indicator at the phase with the smallest
//! weight-to-exit-time ratio (see [`optimal_augmentation`]). [`run`] wires
//! the pieces into the checkpointed iteration with the successive-difference
//! stopping rule.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::bounds::{self, DriftCertificate};
use crate::chain::{checked_block, Bandwidth, BlockGenerator, ChainError, LevelVector};
use crate::mat::{self, Matrix};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Entries of sojourn blocks inside `[-CLIP_BAND, 0)` are rounding noise and
/// clipped to zero; anything below is a genuine breakdown.
const CLIP_BAND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    Chain(ChainError),
    /// The censored prefix is not invertible at this level. At level 0 this
    /// means level 0 is not transient under censoring (the model is reducible
    /// or not ergodic on the prefix).
    SingularAtLevel { level: usize },
    /// A sojourn or exit-time entry fell below the clipping band.
    NumericalBreakdown { level: usize, entry: f64 },
    InvalidEpsilon { value: f64 },
    /// The supplied augmentation distribution is not a probability vector of
    /// the right width.
    InvalidAugmentation { reason: &'static str },
    InvalidSchedule { reason: &'static str },
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::Chain(e) => write!(f, "{e}"),
            SolverError::SingularAtLevel { level } => {
                if *level == 0 {
                    write!(f, "level 0 not transient under censoring (singular diagonal block)")
                } else {
                    write!(f, "prefix not censorable at level {level} (singular update)")
                }
            }
            SolverError::NumericalBreakdown { level, entry } => {
                write!(f, "numerical breakdown at level {level}: entry {entry:e} below the clipping band")
            }
            SolverError::InvalidEpsilon { value } => {
                write!(f, "epsilon must lie in (0,1), got {value}")
            }
            SolverError::InvalidAugmentation { reason } => {
                write!(f, "augmentation distribution invalid: {reason}")
            }
            SolverError::InvalidSchedule { reason } => write!(f, "invalid schedule: {reason}"),
        }
    }
}

impl core::error::Error for SolverError {}

impl From<ChainError> for SolverError {
    fn from(e: ChainError) -> Self {
        SolverError::Chain(e)
    }
}

/// Recursion state at truncation level `level`.
///
/// A value type: advancing is a pure state-to-state step, so states can be
/// checkpointed, serialized (with the `serde` feature) and resumed later at a
/// higher truncation level without recomputation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverState {
    level: usize,
    /// `sojourn[k]` = expected sojourn times in level `k` before first
    /// passage above `level`, one row per starting phase of `level`.
    /// `sojourn[level]` is square and invertible.
    sojourn: Vec<Matrix>,
    /// Expected time to first passage above `level`, per starting phase.
    exit_time: Vec<f64>,
    /// Most recent checkpoint (level, approximation), kept so a resumed solve
    /// continues the successive-difference test seamlessly.
    last_checkpoint: Option<(usize, LevelVector)>,
}

impl SolverState {
    /// State at truncation level zero: invert the negated diagonal block.
    pub fn init(chain: &(impl BlockGenerator + ?Sized)) -> Result<Self, SolverError> {
        let q00 = checked_block(chain, 0, 0)?
            .ok_or(SolverError::SingularAtLevel { level: 0 })?;
        let mut top = q00
            .neg()
            .inverse()
            .map_err(|_| SolverError::SingularAtLevel { level: 0 })?;
        if let Some(worst) = top.clip_negative(CLIP_BAND) {
            return Err(SolverError::NumericalBreakdown { level: 0, entry: worst });
        }
        let dim = chain.level_dim(0)?;
        let exit_time = top.mul_vec(&vec![1.0; dim]);
        let mut state =
            SolverState { level: 0, sojourn: vec![top], exit_time, last_checkpoint: None };
        state.check_exit_time()?;
        Ok(state)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Expected-sojourn block for `level_k` (width of that level), rows
    /// indexed by the starting phase at the current truncation level.
    pub fn sojourn_block(&self, level_k: usize) -> &Matrix {
        &self.sojourn[level_k]
    }

    pub fn sojourn_blocks(&self) -> &[Matrix] {
        &self.sojourn
    }

    /// The square block at the truncation level itself.
    pub fn top_block(&self) -> &Matrix {
        &self.sojourn[self.level]
    }

    pub fn exit_time(&self) -> &[f64] {
        &self.exit_time
    }

    pub fn last_checkpoint(&self) -> Option<&(usize, LevelVector)> {
        self.last_checkpoint.as_ref()
    }

    /// Assembles a state from raw parts without running the recursion.
    /// Intended for tests of formula-level behavior; no invariants checked.
    #[doc(hidden)]
    pub fn from_raw(level: usize, sojourn: Vec<Matrix>, exit_time: Vec<f64>) -> Self {
        SolverState { level, sojourn, exit_time, last_checkpoint: None }
    }

    /// Advances the truncation level by one.
    ///
    /// The new top block solves a small linear system assembled from the
    /// previous state; every stored block is then refreshed by one
    /// left-multiplication. The per-level refreshes are independent, so with
    /// the `parallel` feature they run on multiple threads with results
    /// identical to the serial order.
    pub fn advance(&mut self, chain: &(impl BlockGenerator + ?Sized)) -> Result<(), SolverError> {
        let n = self.level + 1;
        let dim_n = chain.level_dim(n)?;
        let dim_prev = chain.level_dim(n - 1)?;

        let down = match checked_block(chain, n, n - 1)? {
            Some(b) => b,
            None => Matrix::zeros(dim_n, dim_prev),
        };

        // Feedback of upward flow re-entering level n through the censored
        // prefix: sum over source levels that can reach level n in one jump.
        let lo = match chain.upper_bandwidth() {
            Bandwidth::Finite(b) => n.saturating_sub(b),
            Bandwidth::Unbounded => 0,
        };
        let mut feedback = Matrix::zeros(dim_prev, dim_n);
        for l in lo..n {
            if let Some(q) = checked_block(chain, l, n)? {
                feedback.add_assign(&self.sojourn[l].mul(&q));
            }
        }

        let diag = checked_block(chain, n, n)?
            .ok_or(SolverError::SingularAtLevel { level: n })?;
        let mut bracket = diag.neg();
        bracket.sub_assign(&down.mul(&feedback));
        let mut top = bracket
            .inverse()
            .map_err(|_| SolverError::SingularAtLevel { level: n })?;
        if let Some(worst) = top.clip_negative(CLIP_BAND) {
            return Err(SolverError::NumericalBreakdown { level: n, entry: worst });
        }

        // Refresh all stored blocks and append the new top.
        let step = top.mul(&down);
        #[cfg(feature = "parallel")]
        let refreshed: Vec<Matrix> = self.sojourn.par_iter().map(|b| step.mul(b)).collect();
        #[cfg(not(feature = "parallel"))]
        let refreshed: Vec<Matrix> = self.sojourn.iter().map(|b| step.mul(b)).collect();

        let mut ones_plus = down.mul_vec(&self.exit_time);
        for x in &mut ones_plus {
            *x += 1.0;
        }
        let exit_time = top.mul_vec(&ones_plus);

        self.level = n;
        self.sojourn = refreshed;
        self.sojourn.push(top);
        self.exit_time = exit_time;
        self.check_exit_time()
    }

    // Exit times are strictly positive for censorable prefixes; anything
    // nonpositive means the recursion has broken down numerically.
    fn check_exit_time(&mut self) -> Result<(), SolverError> {
        let level = self.level;
        for x in &self.exit_time {
            if *x <= 0.0 {
                return Err(SolverError::NumericalBreakdown { level, entry: *x });
            }
        }
        Ok(())
    }

    /// Stationary vector of the truncation whose lost outflow is redirected
    /// into the last block column by `augmentation` (a probability vector
    /// over the phases of the truncation level).
    pub fn approximation(&self, augmentation: &[f64]) -> Result<LevelVector, SolverError> {
        let dim = self.sojourn[self.level].rows();
        if augmentation.len() != dim {
            return Err(SolverError::InvalidAugmentation { reason: "width mismatch" });
        }
        if augmentation.iter().any(|&a| a < 0.0) {
            return Err(SolverError::InvalidAugmentation { reason: "negative entry" });
        }
        let total: f64 = augmentation.iter().sum();
        if libm::fabs(total - 1.0) > 1e-12 {
            return Err(SolverError::InvalidAugmentation { reason: "mass differs from 1" });
        }
        let denom = mat::dot(augmentation, &self.exit_time);
        let segments: Vec<Vec<f64>> = self
            .sojourn
            .iter()
            .map(|b| {
                let mut row = mat::row_mul(augmentation, b);
                for x in &mut row {
                    *x /= denom;
                }
                row
            })
            .collect();
        LevelVector::probability(segments)
            .map_err(|_| SolverError::NumericalBreakdown { level: self.level, entry: denom })
    }
}

/// Closed-form solution of the augmentation choice: an indicator at the phase
/// minimizing `tail_weight[j] / exit_time[j]`; ties break to the smallest
/// phase index for reproducibility.
pub fn optimal_augmentation(state: &SolverState, tail_weight: &[f64]) -> (usize, Vec<f64>) {
    let u = state.exit_time();
    debug_assert_eq!(u.len(), tail_weight.len());
    let mut best = 0usize;
    let mut best_ratio = tail_weight[0] / u[0];
    for j in 1..u.len() {
        let r = tail_weight[j] / u[j];
        if r < best_ratio {
            best = j;
            best_ratio = r;
        }
    }
    let mut alpha = vec![0.0; u.len()];
    alpha[best] = 1.0;
    (best, alpha)
}

/// Total variation distance between two level vectors; the shorter one is
/// implicitly padded with zeros (finite vectors embed into infinite ones).
pub fn tv_distance(a: &LevelVector, b: &LevelVector) -> f64 {
    let x = a.flatten();
    let y = b.flatten();
    let common = x.len().min(y.len());
    let mut tv = 0.0;
    for i in 0..common {
        tv += libm::fabs(x[i] - y[i]);
    }
    for &v in &x[common..] {
        tv += libm::fabs(v);
    }
    for &v in &y[common..] {
        tv += libm::fabs(v);
    }
    tv
}

/// Checkpoint levels: strictly increasing positive integers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncationSchedule {
    rule: ScheduleRule,
    cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
enum ScheduleRule {
    Arithmetic { step: usize },
    Geometric { ratio: f64 },
}

impl TruncationSchedule {
    /// Checkpoints `step, 2*step, 3*step, ...`.
    pub fn arithmetic(step: usize) -> Result<Self, SolverError> {
        if step == 0 {
            return Err(SolverError::InvalidSchedule { reason: "step must be at least 1" });
        }
        Ok(TruncationSchedule { rule: ScheduleRule::Arithmetic { step }, cap: None })
    }

    /// Checkpoints `1, ceil(1*ratio), ...`, always advancing by at least one.
    pub fn geometric(ratio: f64) -> Result<Self, SolverError> {
        if !(ratio > 1.0) || !ratio.is_finite() {
            return Err(SolverError::InvalidSchedule { reason: "ratio must exceed 1" });
        }
        Ok(TruncationSchedule { rule: ScheduleRule::Geometric { ratio }, cap: None })
    }

    /// Hard maximum truncation level; the solve reports `converged = false`
    /// when it is reached.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let cap = self.cap;
        let mut current = 0usize;
        let rule = self.rule.clone();
        core::iter::from_fn(move || {
            let next = match rule {
                ScheduleRule::Arithmetic { step } => current + step,
                ScheduleRule::Geometric { ratio } => {
                    if current == 0 {
                        1
                    } else {
                        let scaled = libm::ceil(current as f64 * ratio) as usize;
                        scaled.max(current + 1)
                    }
                }
            };
            if let Some(c) = cap {
                if next > c {
                    return None;
                }
            }
            current = next;
            Some(next)
        })
    }
}

impl Default for TruncationSchedule {
    fn default() -> Self {
        TruncationSchedule { rule: ScheduleRule::Arithmetic { step: 10 }, cap: None }
    }
}

/// Diagnostics recorded at one checkpoint level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub level: usize,
    /// Phase receiving the augmentation mass (absent for fixed external
    /// augmentation rules).
    pub phase: Option<usize>,
    /// Residual ratio `alpha*tail_weight / alpha*exit_time`; the computable
    /// half of the error bound. Absent without a drift certificate.
    pub residual: Option<f64>,
    /// Whether the tail weights behind `residual` are exact or upper bounds.
    pub residual_exact: Option<bool>,
    /// Total variation distance to the previous checkpoint (absent at the
    /// first).
    pub tv: Option<f64>,
}

/// Outcome of a (possibly capped) sequential solve.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveResult {
    pub pi_hat: LevelVector,
    pub stop_level: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub converged: bool,
    /// Full error bound at the stopping level, available when the
    /// certificate carries resolvent data; the successive-difference stopping
    /// rule itself never needs it.
    pub error_bound: Option<f64>,
    /// State at the stopping level, for resuming at a higher truncation.
    pub state: SolverState,
}

impl SolveResult {
    pub fn tv_history(&self) -> Vec<f64> {
        self.checkpoints.iter().filter_map(|c| c.tv).collect()
    }

    pub fn residual_history(&self) -> Vec<f64> {
        self.checkpoints.iter().filter_map(|c| c.residual).collect()
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), SolverError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SolverError::InvalidEpsilon { value: epsilon });
    }
    Ok(())
}

enum AugmentationRule<'a> {
    Optimal(&'a DriftCertificate),
    Fixed(&'a dyn Fn(usize, usize) -> Vec<f64>),
}

/// Sequential solve with the adaptively optimized augmentation distribution.
///
/// Preconditions: the generator validates on the prefix and the certificate's
/// drift inequality holds (see [`bounds::check_drift`]); neither is
/// re-verified here.
pub fn run(
    chain: &(impl BlockGenerator + ?Sized),
    certificate: &DriftCertificate,
    schedule: &TruncationSchedule,
    epsilon: f64,
) -> Result<SolveResult, SolverError> {
    check_epsilon(epsilon)?;
    let state = SolverState::init(chain)?;
    drive(state, chain, AugmentationRule::Optimal(certificate), schedule, epsilon)
}

/// Resumes a solve from a deserialized state; only checkpoints above the
/// state's level are visited, and the stored last checkpoint keeps the
/// successive-difference test continuous.
pub fn run_from(
    state: SolverState,
    chain: &(impl BlockGenerator + ?Sized),
    certificate: &DriftCertificate,
    schedule: &TruncationSchedule,
    epsilon: f64,
) -> Result<SolveResult, SolverError> {
    check_epsilon(epsilon)?;
    drive(state, chain, AugmentationRule::Optimal(certificate), schedule, epsilon)
}

/// Sequential solve with an externally supplied augmentation rule
/// `(level, width) -> probability vector`. No certificate is needed and no
/// residuals are reported; convergence is *not* guaranteed for arbitrary
/// rules (see [`crate::models::counterexample_generator`]).
pub fn run_fixed_alpha(
    chain: &(impl BlockGenerator + ?Sized),
    schedule: &TruncationSchedule,
    epsilon: f64,
    rule: &dyn Fn(usize, usize) -> Vec<f64>,
) -> Result<SolveResult, SolverError> {
    check_epsilon(epsilon)?;
    let state = SolverState::init(chain)?;
    drive(state, chain, AugmentationRule::Fixed(rule), schedule, epsilon)
}

fn drive(
    mut state: SolverState,
    chain: &(impl BlockGenerator + ?Sized),
    rule: AugmentationRule<'_>,
    schedule: &TruncationSchedule,
    epsilon: f64,
) -> Result<SolveResult, SolverError> {
    let mut checkpoints = Vec::new();
    let mut last_result: Option<(LevelVector, Option<f64>)> = None;

    for target in schedule.iter() {
        if target <= state.level() {
            continue;
        }
        while state.level() < target {
            state.advance(chain)?;
        }

        let (alpha, phase, residual, residual_exact, bound) = match &rule {
            AugmentationRule::Optimal(cert) => {
                let weight = bounds::tail_weight(&state, chain, cert)?;
                let (phase, alpha) = optimal_augmentation(&state, &weight.values);
                let r = bounds::residual(&state, &alpha, &weight.values);
                let (bound, _computable) = bounds::error_bound(&state, cert, &alpha, &weight.values);
                (alpha, Some(phase), Some(r), Some(weight.exact), bound)
            }
            AugmentationRule::Fixed(f) => {
                let dim = chain.level_dim(state.level())?;
                (f(state.level(), dim), None, None, None, None)
            }
        };

        let pi = state.approximation(&alpha)?;
        let tv = state
            .last_checkpoint
            .as_ref()
            .map(|(_, prev)| tv_distance(&pi, prev));
        checkpoints.push(Checkpoint { level: state.level(), phase, residual, residual_exact, tv });
        state.last_checkpoint = Some((state.level(), pi.clone()));
        last_result = Some((pi, bound));

        if let Some(t) = tv {
            if t < epsilon {
                let (pi_hat, error_bound) = last_result.unwrap();
                let stop_level = state.level();
                return Ok(SolveResult {
                    pi_hat,
                    stop_level,
                    checkpoints,
                    converged: true,
                    error_bound,
                    state,
                });
            }
        }
    }

    // Schedule exhausted (cap reached) without convergence; diagnostics are
    // still returned in full.
    let (pi_hat, error_bound) = match last_result {
        Some(x) => x,
        None => {
            return Err(SolverError::InvalidSchedule {
                reason: "schedule yields no checkpoint above the initial level",
            })
        }
    };
    let stop_level = state.level();
    Ok(SolveResult { pi_hat, stop_level, checkpoints, converged: false, error_bound, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn init_scalar_level() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let st = SolverState::init(&chain).unwrap();
        assert_eq!(st.top_block().get(0, 0), 1.0);
        assert_eq!(st.exit_time(), &[1.0]);
    }

    #[test]
    fn init_triangular_level() {
        // Q_{0,0} = [[-2,1],[0,-3]] with up-block completing the rows.
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        let mut blocks = BTreeMap::new();
        let c = |m: &Matrix| AffineMatrix::constant(m);
        blocks.insert((0, 0), c(&Matrix::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]])));
        blocks.insert((0, 1), c(&Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 3.0]])));
        let chain = ExplicitChain::new(vec![2, 2], {
            let mut b = blocks;
            b.insert((1, 0), c(&Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]])));
            b.insert((1, 1), c(&Matrix::from_rows(&[&[-2.0, 0.0], &[0.0, -2.0]])));
            b.insert((1, 2), c(&Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]])));
            b
        }, None)
        .unwrap();
        let st = SolverState::init(&chain).unwrap();
        let t = st.top_block();
        assert!((t.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((t.get(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(t.get(1, 0), 0.0);
        assert!((t.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_rejects_conservative_diagonal_block() {
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        let mut blocks = BTreeMap::new();
        blocks.insert(
            (0, 0),
            AffineMatrix::constant(&Matrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]])),
        );
        let chain = ExplicitChain::new(vec![2], blocks, None).unwrap();
        assert!(matches!(
            SolverState::init(&chain),
            Err(SolverError::SingularAtLevel { level: 0 })
        ));
    }

    #[test]
    fn advance_matches_scalar_recursion_by_hand() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        // Bracket: 3 - 2*1*1 = 1; down-refresh: 1*2*1 = 2; exit: 1*(1+2*1) = 3.
        assert_eq!(st.top_block().get(0, 0), 1.0);
        assert_eq!(st.sojourn_block(0).get(0, 0), 2.0);
        assert_eq!(st.exit_time(), &[3.0]);
    }

    #[test]
    fn advance_with_zero_down_block_decouples_the_level() {
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        let c = |m: &Matrix| AffineMatrix::constant(m);
        let mut b = BTreeMap::new();
        b.insert((0, 0), c(&Matrix::from_rows(&[&[-1.0]])));
        b.insert((0, 1), c(&Matrix::from_rows(&[&[1.0]])));
        // Level 1 never descends.
        b.insert((1, 1), c(&Matrix::from_rows(&[&[-2.0]])));
        b.insert((1, 2), c(&Matrix::from_rows(&[&[2.0]])));
        b.insert((2, 1), c(&Matrix::from_rows(&[&[1.0]])));
        b.insert((2, 2), c(&Matrix::from_rows(&[&[-3.0]])));
        b.insert((2, 3), c(&Matrix::from_rows(&[&[2.0]])));
        let chain = ExplicitChain::new(vec![1, 1, 1], b, None).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        assert_eq!(st.top_block().get(0, 0), 0.5);
        assert_eq!(st.sojourn_block(0).get(0, 0), 0.0);
        assert_eq!(st.exit_time(), &[0.5]);
    }

    #[test]
    fn optimal_augmentation_breaks_ties_to_the_smallest_phase() {
        let fake = SolverState {
            level: 0,
            sojourn: vec![Matrix::identity(3)],
            exit_time: vec![1.0, 1.0, 2.0],
            last_checkpoint: None,
        };
        // ratios (5, 2, 2): phases 1 and 2 tie, the smaller index wins.
        let (j, alpha) = optimal_augmentation(&fake, &[5.0, 2.0, 4.0]);
        assert_eq!(j, 1);
        assert_eq!(alpha, vec![0.0, 1.0, 0.0]);
        // ratios (3, 3, 50): phases 0 and 1 tie, index 0 wins.
        let (j2, _) = optimal_augmentation(&fake, &[3.0, 3.0, 100.0]);
        assert_eq!(j2, 0);
    }

    #[test]
    fn optimal_augmentation_two_phase_example() {
        let fake = SolverState {
            level: 0,
            sojourn: vec![Matrix::identity(2)],
            exit_time: vec![1.0, 2.0],
            last_checkpoint: None,
        };
        // ratios (3, 1.5): second phase wins.
        let (j, _) = optimal_augmentation(&fake, &[3.0, 3.0]);
        assert_eq!(j, 1);
    }

    #[test]
    fn approximation_of_two_level_birth_death() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        let pi = st.approximation(&[1.0]).unwrap();
        assert!((pi.segment(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi.segment(1)[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn approximation_rejects_non_probability_augmentation() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let st = SolverState::init(&chain).unwrap();
        assert!(matches!(
            st.approximation(&[0.5]),
            Err(SolverError::InvalidAugmentation { .. })
        ));
        assert!(matches!(
            st.approximation(&[0.5, 0.5]),
            Err(SolverError::InvalidAugmentation { .. })
        ));
    }

    #[test]
    fn tv_distance_pads_with_zeros() {
        let p = LevelVector::signed(vec![vec![0.5, 0.5]]);
        let q = LevelVector::signed(vec![vec![0.5, 0.3], vec![0.2]]);
        assert!((tv_distance(&p, &q) - 0.4).abs() < 1e-15);
        let a = LevelVector::signed(vec![vec![1.0]]);
        let b = LevelVector::signed(vec![vec![0.0, 1.0]]);
        assert_eq!(tv_distance(&a, &b), 2.0);
        assert_eq!(tv_distance(&a, &a), 0.0);
    }

    #[test]
    fn schedules_produce_increasing_checkpoints() {
        let s = TruncationSchedule::arithmetic(10).unwrap().with_cap(35);
        let levels: Vec<usize> = s.iter().collect();
        assert_eq!(levels, vec![10, 20, 30]);
        let g = TruncationSchedule::geometric(2.0).unwrap().with_cap(20);
        let levels: Vec<usize> = g.iter().collect();
        assert_eq!(levels, vec![1, 2, 4, 8, 16]);
        assert!(TruncationSchedule::arithmetic(0).is_err());
        assert!(TruncationSchedule::geometric(1.0).is_err());
    }

    #[test]
    fn run_rejects_epsilon_outside_unit_interval() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let cert = crate::bounds::mm1_certificate(1.0, 2.0).unwrap();
        let sched = TruncationSchedule::default().with_cap(100);
        assert!(matches!(
            run(&chain, &cert, &sched, 2.0),
            Err(SolverError::InvalidEpsilon { .. })
        ));
        assert!(matches!(
            run(&chain, &cert, &sched, 0.0),
            Err(SolverError::InvalidEpsilon { .. })
        ));
    }

    #[test]
    fn capped_run_reports_not_converged_with_diagnostics() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let cert = crate::bounds::mm1_certificate(1.0, 2.0).unwrap();
        let sched = TruncationSchedule::arithmetic(5).unwrap().with_cap(10);
        let res = run(&chain, &cert, &sched, 1e-300).unwrap();
        assert!(!res.converged);
        assert_eq!(res.stop_level, 10);
        assert_eq!(res.checkpoints.len(), 2);
        assert!(res.checkpoints[1].tv.is_some());
    }

    #[test]
    fn fixed_alpha_on_scalar_chain_matches_optimal_run() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let cert = crate::bounds::mm1_certificate(1.0, 2.0).unwrap();
        let sched = TruncationSchedule::default().with_cap(500);
        let a = run(&chain, &cert, &sched, 1e-8).unwrap();
        let b = run_fixed_alpha(&chain, &sched, 1e-8, &|_, _| vec![1.0]).unwrap();
        assert_eq!(a.stop_level, b.stop_level);
        assert_eq!(tv_distance(&a.pi_hat, &b.pi_hat), 0.0);
    }
}
