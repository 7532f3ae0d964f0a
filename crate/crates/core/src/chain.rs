//! The block-partitioned generator abstraction.
//!
//! A chain is described lazily: implementors answer queries for the width of
//! each level and for individual rate blocks, so infinite chains never need
//! materializing. Blocks below the first sub-diagonal must be zero (upper
//! block-Hessenberg structure); everything else is checked, not assumed, by
//! [`validate_generator`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::mat::Matrix;

/// How far above the diagonal nonzero blocks can reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    /// `block(k, l)` is zero whenever `l > k + bound`.
    Finite(usize),
    /// No a-priori bound; analytic tail sums must be supplied by the
    /// implementor through [`BlockGenerator::tail_weighted_sum`].
    Unbounded,
}

/// Errors from querying a generator.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainError {
    /// The generator cannot answer queries at this level (for tabulated
    /// chains: beyond the stored prefix and no repetition rule).
    LevelOutOfRange { level: usize, limit: usize },
    /// A returned block's shape disagrees with the declared level widths.
    BadBlockShape { from: usize, to: usize, expected: (usize, usize), got: (usize, usize) },
    /// Tail sums over truncated columns are not computable: the bandwidth is
    /// unbounded and the implementor supplies no analytic tail.
    TailUnavailable { level: usize, truncation: usize },
}

impl fmt::Display for ChainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainError::LevelOutOfRange { level, limit } => {
                write!(f, "level {level} is beyond the queryable range (limit {limit}); supply a repetition rule or extend the prefix")
            }
            ChainError::BadBlockShape { from, to, expected, got } => write!(
                f,
                "block ({from},{to}) has shape {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            ChainError::TailUnavailable { level, truncation } => write!(
                f,
                "tail sum beyond level {truncation} from level {level} needs an analytic tail: bandwidth is unbounded"
            ),
        }
    }
}

impl core::error::Error for ChainError {}

/// Whether a tail sum is exact or an elementwise upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    Exact,
    UpperBound,
}

/// Result of a tail sum `sum_{l > n} Q_{k,l} v_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSum {
    pub values: Vec<f64>,
    pub kind: TailKind,
}

/// Lazy query interface for an upper block-Hessenberg generator.
///
/// Implementations must be immutable after construction; all methods are pure
/// queries, so a generator can be shared freely across threads.
pub trait BlockGenerator: Send + Sync {
    /// Number of phases at `level`.
    fn level_dim(&self, level: usize) -> Result<usize, ChainError>;

    /// Rate block from `from` to `to`; `Ok(None)` stands for a zero block.
    fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError>;

    fn upper_bandwidth(&self) -> Bandwidth;

    /// `sum_{l > truncation} Q_{from,l} v_l` where `v_l` is the vector
    /// `weight(l, .)` of width `level_dim(l)`.
    ///
    /// The default covers finite bandwidth exactly; unbounded chains must
    /// override this with an analytic tail (exact, or an elementwise upper
    /// bound flagged as such).
    fn tail_weighted_sum(
        &self,
        weight: &dyn Fn(usize, usize) -> f64,
        from: usize,
        truncation: usize,
    ) -> Result<TailSum, ChainError> {
        debug_assert!(from <= truncation);
        let band = match self.upper_bandwidth() {
            Bandwidth::Finite(b) => b,
            Bandwidth::Unbounded => {
                return Err(ChainError::TailUnavailable { level: from, truncation })
            }
        };
        let mut out = vec![0.0; self.level_dim(from)?];
        for l in truncation + 1..=from + band {
            if let Some(q) = checked_block(self, from, l)? {
                let dim = self.level_dim(l)?;
                let v: Vec<f64> = (0..dim).map(|i| weight(l, i)).collect();
                for (o, x) in out.iter_mut().zip(q.mul_vec(&v)) {
                    *o += x;
                }
            }
        }
        Ok(TailSum { values: out, kind: TailKind::Exact })
    }
}

/// Queries a block and verifies its shape against the declared level widths.
pub fn checked_block(
    chain: &(impl BlockGenerator + ?Sized),
    from: usize,
    to: usize,
) -> Result<Option<Matrix>, ChainError> {
    match chain.block(from, to)? {
        None => Ok(None),
        Some(b) => {
            let expected = (chain.level_dim(from)?, chain.level_dim(to)?);
            if (b.rows(), b.cols()) != expected {
                return Err(ChainError::BadBlockShape {
                    from,
                    to,
                    expected,
                    got: (b.rows(), b.cols()),
                });
            }
            Ok(Some(b))
        }
    }
}

/// Interpretation of a level-partitioned row vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum VectorKind {
    Probability,
    SubProbability,
    Signed,
}

/// A row vector partitioned by level; segment `k` has the width of level `k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelVector {
    segments: Vec<Vec<f64>>,
    kind: VectorKind,
}

/// Constructing a [`LevelVector`] with an interpretation its entries violate.
#[derive(Debug, Clone, PartialEq)]
pub struct InvalidLevelVector {
    pub reason: &'static str,
    pub detail: f64,
}

impl fmt::Display for InvalidLevelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:e})", self.reason, self.detail)
    }
}

impl core::error::Error for InvalidLevelVector {}

impl LevelVector {
    /// A probability vector: entries nonnegative, total within 1e-12 of one.
    /// Entries in `[-1e-12, 0)` are clipped to zero.
    pub fn probability(mut segments: Vec<Vec<f64>>) -> Result<Self, InvalidLevelVector> {
        for seg in &mut segments {
            for x in seg {
                if *x < 0.0 {
                    if *x < -1e-12 {
                        return Err(InvalidLevelVector { reason: "negative entry", detail: *x });
                    }
                    *x = 0.0;
                }
            }
        }
        let total: f64 = segments.iter().flatten().sum();
        if libm::fabs(total - 1.0) > 1e-12 {
            return Err(InvalidLevelVector { reason: "total mass differs from 1", detail: total });
        }
        Ok(LevelVector { segments, kind: VectorKind::Probability })
    }

    /// Nonnegative with total at most one (within 1e-12).
    pub fn sub_probability(segments: Vec<Vec<f64>>) -> Result<Self, InvalidLevelVector> {
        let total: f64 = segments.iter().flatten().sum();
        if segments.iter().flatten().any(|&x| x < -1e-12) {
            return Err(InvalidLevelVector { reason: "negative entry", detail: total });
        }
        if total > 1.0 + 1e-12 {
            return Err(InvalidLevelVector { reason: "total mass exceeds 1", detail: total });
        }
        Ok(LevelVector { segments, kind: VectorKind::SubProbability })
    }

    pub fn signed(segments: Vec<Vec<f64>>) -> Self {
        LevelVector { segments, kind: VectorKind::Signed }
    }

    pub fn kind(&self) -> VectorKind {
        self.kind
    }

    pub fn num_levels(&self) -> usize {
        self.segments.len()
    }

    pub fn segment(&self, level: usize) -> &[f64] {
        &self.segments[level]
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().flatten().sum()
    }

    /// Mass per level.
    pub fn level_masses(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.iter().sum()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.segments.iter().flatten().copied().collect()
    }
}

/// One structural defect found by [`validate_generator`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteEntry { level: usize, phase: usize, to: usize, col: usize },
    NegativeOffDiagonal { level: usize, phase: usize, to: usize, col: usize, value: f64 },
    NonNegativeDiagonal { level: usize, phase: usize, value: f64 },
    RowSumNonzero { level: usize, phase: usize, sum: f64 },
    SubSubDiagonalNonzero { from: usize, to: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteEntry { level, phase, to, col } => {
                write!(f, "non-finite rate at level {level} phase {phase} -> ({to},{col})")
            }
            Violation::NegativeOffDiagonal { level, phase, to, col, value } => {
                write!(f, "negative rate {value} at level {level} phase {phase} -> ({to},{col})")
            }
            Violation::NonNegativeDiagonal { level, phase, value } => {
                write!(f, "nonnegative diagonal {value} at level {level} phase {phase}")
            }
            Violation::RowSumNonzero { level, phase, sum } => {
                write!(f, "row sum {sum} at level {level} phase {phase}")
            }
            Violation::SubSubDiagonalNonzero { from, to } => {
                write!(f, "sub-sub-diagonal block nonzero at ({from},{to})")
            }
        }
    }
}

/// Outcome of structural validation over a finite prefix of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checked_levels: usize,
    /// False when row sums could not be verified (unbounded bandwidth whose
    /// analytic tail is an upper bound or missing).
    pub row_sums_checked: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "levels 0..={}: no structural violations", self.checked_levels)
        } else {
            writeln!(f, "levels 0..={}: {} violation(s)", self.checked_levels, self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  - {v}")?;
            }
            Ok(())
        }
    }
}

/// Checks the generator invariants on levels `0..=max_level`: finite entries,
/// nonnegative off-diagonal rates, negative diagonals, zero row sums (tolerance
/// `1e-10` times the largest absolute rate in the row), and zero blocks below
/// the first sub-diagonal.
pub fn validate_generator(
    chain: &(impl BlockGenerator + ?Sized),
    max_level: usize,
) -> Result<ValidationReport, ChainError> {
    let mut violations = Vec::new();
    let mut row_sums_checked = true;

    for k in 0..=max_level {
        let dim = chain.level_dim(k)?;

        // Structure below the first sub-diagonal.
        for l in 0..k.saturating_sub(1) {
            if let Some(b) = chain.block(k, l)? {
                if !b.is_zero() {
                    violations.push(Violation::SubSubDiagonalNonzero { from: k, to: l });
                }
            }
        }

        let band_end = match chain.upper_bandwidth() {
            Bandwidth::Finite(b) => Some(k + b),
            Bandwidth::Unbounded => None,
        };

        let mut row_sums = vec![0.0; dim];
        let mut row_scale = vec![0.0f64; dim];
        let in_band: Vec<usize> = match band_end {
            Some(e) => (k.saturating_sub(1)..=e).collect(),
            // Without a bandwidth we can still check signs on the first few
            // off-diagonals; row sums come from the analytic tail below.
            None => (k.saturating_sub(1)..=k).collect(),
        };
        for &l in &in_band {
            let Some(b) = checked_block(chain, k, l)? else { continue };
            for i in 0..dim {
                for j in 0..b.cols() {
                    let v = b.get(i, j);
                    if !v.is_finite() {
                        violations.push(Violation::NonFiniteEntry { level: k, phase: i, to: l, col: j });
                        continue;
                    }
                    row_sums[i] += v;
                    row_scale[i] = row_scale[i].max(libm::fabs(v));
                    if l == k && i == j {
                        if v >= 0.0 {
                            violations.push(Violation::NonNegativeDiagonal { level: k, phase: i, value: v });
                        }
                    } else if v < 0.0 {
                        violations.push(Violation::NegativeOffDiagonal { level: k, phase: i, to: l, col: j, value: v });
                    }
                }
            }
        }

        if band_end.is_none() {
            // Row sum = in-band part + analytic tail with unit weights.
            match chain.tail_weighted_sum(&|_, _| 1.0, k, k) {
                Ok(TailSum { values, kind: TailKind::Exact }) => {
                    for (s, t) in row_sums.iter_mut().zip(values) {
                        *s += t;
                    }
                }
                _ => {
                    row_sums_checked = false;
                    continue;
                }
            }
        }
        for i in 0..dim {
            let tol = 1e-10 * row_scale[i].max(1e-300);
            if libm::fabs(row_sums[i]) > tol {
                violations.push(Violation::RowSumNonzero { level: k, phase: i, sum: row_sums[i] });
            }
        }
    }

    Ok(ValidationReport { checked_levels: max_level, row_sums_checked, violations })
}

/// Offsets of each level inside the flattened state space of levels
/// `0..=max_level`; the last entry is the total dimension.
pub fn level_offsets(
    chain: &(impl BlockGenerator + ?Sized),
    max_level: usize,
) -> Result<Vec<usize>, ChainError> {
    let mut offs = Vec::with_capacity(max_level + 2);
    offs.push(0);
    for k in 0..=max_level {
        offs.push(offs[k] + chain.level_dim(k)?);
    }
    Ok(offs)
}

/// Dense assembly of the northwest-corner prefix over levels `0..=max_level`,
/// in level-major phase-minor order.
pub fn finite_prefix(
    chain: &(impl BlockGenerator + ?Sized),
    max_level: usize,
) -> Result<Matrix, ChainError> {
    let offs = level_offsets(chain, max_level)?;
    let n = offs[max_level + 1];
    let mut q = Matrix::zeros(n, n);
    for k in 0..=max_level {
        for l in k.saturating_sub(1)..=max_level {
            if let Some(b) = checked_block(chain, k, l)? {
                for i in 0..b.rows() {
                    for j in 0..b.cols() {
                        q.set(offs[k] + i, offs[l] + j, b.get(i, j));
                    }
                }
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    struct BadChain;

    // Two scalar levels with a deliberate sub-sub-diagonal block and a bad
    // row sum, to exercise the report.
    impl BlockGenerator for BadChain {
        fn level_dim(&self, _level: usize) -> Result<usize, ChainError> {
            Ok(1)
        }
        fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError> {
            Ok(match (from, to) {
                (2, 0) => Some(Matrix::from_rows(&[&[1.0]])),
                (1, 1) => Some(Matrix::from_rows(&[&[-1.0]])),
                (1, 2) => Some(Matrix::from_rows(&[&[1.5]])),
                (k, l) if l == k => Some(Matrix::from_rows(&[&[-1.0]])),
                (k, l) if l == k + 1 => Some(Matrix::from_rows(&[&[1.0]])),
                (k, l) if k == l + 1 => Some(Matrix::from_rows(&[&[0.0]])),
                _ => None,
            })
        }
        fn upper_bandwidth(&self) -> Bandwidth {
            Bandwidth::Finite(1)
        }
    }

    #[test]
    fn mm1_prefix_is_clean() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let report = validate_generator(&chain, 5).unwrap();
        assert!(report.is_clean(), "{report}");
        assert!(report.row_sums_checked);
    }

    #[test]
    fn structure_violations_are_reported_with_locations() {
        let report = validate_generator(&BadChain, 3).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SubSubDiagonalNonzero { from: 2, to: 0 })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::RowSumNonzero { level: 1, phase: 0, sum } if (sum - 0.5).abs() < 1e-12)));
    }

    #[test]
    fn mm1_finite_prefix_n1() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let q = finite_prefix(&chain, 1).unwrap();
        assert_eq!(q.rows(), 2);
        assert_eq!(q.row(0), &[-1.0, 1.0]);
        assert_eq!(q.row(1), &[2.0, -3.0]);
    }

    #[test]
    fn prefix_embeds_previous_prefix_exactly() {
        let spec = models::RetrialSpec::new(1.0, 2.0, 2, 3.0).unwrap();
        let chain = models::retrial_generator(spec);
        let small = finite_prefix(&chain, 4).unwrap();
        let big = finite_prefix(&chain, 5).unwrap();
        for i in 0..small.rows() {
            for j in 0..small.cols() {
                assert_eq!(small.get(i, j), big.get(i, j));
            }
        }
    }

    #[test]
    fn prefix_of_single_level_is_the_diagonal_block() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let q = finite_prefix(&chain, 0).unwrap();
        assert_eq!(q.rows(), 1);
        assert_eq!(q.get(0, 0), -1.0);
    }

    #[test]
    fn tail_sum_is_zero_strictly_inside_the_band() {
        let spec = models::RetrialSpec::new(1.0, 1.0, 1, 1.0).unwrap();
        let chain = models::retrial_generator(spec);
        let t = chain.tail_weighted_sum(&|k, _| (k + 1) as f64, 2, 5).unwrap();
        assert_eq!(t.kind, TailKind::Exact);
        assert!(t.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tail_sum_at_the_edge_is_the_single_band_term() {
        // Pure-birth arrivals: tail from (k=n, n) is Q_{n,n+1} v_{n+1}.
        let d0 = Matrix::from_rows(&[&[-2.0]]);
        let d1 = Matrix::from_rows(&[&[2.0]]);
        let spec = models::BmapSpec::new(vec![d0, d1], 1.0).unwrap();
        let chain = models::bmap_generator(spec);
        let v = |k: usize, _i: usize| libm::log(k as f64 + core::f64::consts::E);
        let t = chain.tail_weighted_sum(&v, 3, 3).unwrap();
        assert_eq!(t.values.len(), 1);
        let expect = 2.0 * libm::log(4.0 + core::f64::consts::E);
        assert!((t.values[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn unbounded_band_without_analytic_tail_is_a_capability_error() {
        struct NoTail;
        impl BlockGenerator for NoTail {
            fn level_dim(&self, _: usize) -> Result<usize, ChainError> {
                Ok(1)
            }
            fn block(&self, _: usize, _: usize) -> Result<Option<Matrix>, ChainError> {
                Ok(None)
            }
            fn upper_bandwidth(&self) -> Bandwidth {
                Bandwidth::Unbounded
            }
        }
        let err = NoTail.tail_weighted_sum(&|_, _| 1.0, 0, 0).unwrap_err();
        assert!(matches!(err, ChainError::TailUnavailable { .. }));
    }

    #[test]
    fn probability_vector_checks_mass() {
        assert!(LevelVector::probability(vec![vec![0.5], vec![0.5]]).is_ok());
        assert!(LevelVector::probability(vec![vec![0.5], vec![0.4]]).is_err());
        assert!(LevelVector::probability(vec![vec![1.5], vec![-0.5]]).is_err());
    }
}
