//! Concrete chains: the BMAP/M/∞ queue, the M/M/s retrial queue, a
//! two-phase counterexample to fixed-augmentation convergence, and tabulated
//! chains built from an explicit block prefix plus an affine repetition rule.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::chain::{Bandwidth, BlockGenerator, ChainError};
use crate::mat::Matrix;

/// Invalid model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelError {
    pub reason: &'static str,
}

impl ModelError {
    fn new(reason: &'static str) -> Self {
        ModelError { reason }
    }
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model: {}", self.reason)
    }
}

impl core::error::Error for ModelError {}

// ---------------------------------------------------------------------------
// BMAP/M/∞
// ---------------------------------------------------------------------------

/// Batch Markovian arrival process feeding infinitely many exponential
/// servers. `arrivals[m]` is the rate matrix of batch size `m`
/// (`arrivals[0]` governs phase changes without arrivals).
#[derive(Debug, Clone, PartialEq)]
pub struct BmapSpec {
    arrivals: Vec<Matrix>,
    service_rate: f64,
}

impl BmapSpec {
    pub fn new(arrivals: Vec<Matrix>, service_rate: f64) -> Result<Self, ModelError> {
        if !(service_rate > 0.0) || !service_rate.is_finite() {
            return Err(ModelError::new("service rate must be positive and finite"));
        }
        if arrivals.len() < 2 {
            return Err(ModelError::new("need at least batch matrices for sizes 0 and 1"));
        }
        let m = arrivals[0].rows();
        if m == 0 {
            return Err(ModelError::new("phase count must be positive"));
        }
        for (idx, d) in arrivals.iter().enumerate() {
            if d.rows() != m || d.cols() != m {
                return Err(ModelError::new("batch matrices must be square with equal size"));
            }
            for i in 0..m {
                for j in 0..m {
                    let v = d.get(i, j);
                    if !v.is_finite() {
                        return Err(ModelError::new("batch matrices must be finite"));
                    }
                    if idx == 0 && i == j {
                        if v >= 0.0 {
                            return Err(ModelError::new(
                                "diagonal of the size-0 matrix must be negative",
                            ));
                        }
                    } else if v < 0.0 {
                        return Err(ModelError::new("arrival rates must be nonnegative"));
                    }
                }
            }
        }
        // The superposition is the background generator: zero row sums.
        let mut background = Matrix::zeros(m, m);
        for d in &arrivals {
            for i in 0..m {
                for j in 0..m {
                    background.add_to(i, j, d.get(i, j));
                }
            }
        }
        let scale = background.max_abs().max(1e-300);
        for i in 0..m {
            let s: f64 = background.row(i).iter().sum();
            if libm::fabs(s) > 1e-10 * scale {
                return Err(ModelError::new("batch matrices must superpose to zero row sums"));
            }
        }
        if !irreducible(&background) {
            return Err(ModelError::new("background generator must be irreducible"));
        }
        let any_arrival = arrivals[1..].iter().any(|d| d.max_abs() > 0.0);
        if !any_arrival {
            return Err(ModelError::new("at least one positive arrival rate is required"));
        }
        Ok(BmapSpec { arrivals, service_rate })
    }

    pub fn phases(&self) -> usize {
        self.arrivals[0].rows()
    }

    pub fn max_batch(&self) -> usize {
        self.arrivals.len() - 1
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    pub fn batch_matrix(&self, m: usize) -> &Matrix {
        &self.arrivals[m]
    }
}

/// Strong connectivity of the off-diagonal positive-rate digraph.
fn irreducible(generator: &Matrix) -> bool {
    let m = generator.rows();
    if m == 1 {
        return true;
    }
    let reachable_all = |start: usize, transpose: bool| -> bool {
        let mut seen = vec![false; m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let v = if transpose { generator.get(j, i) } else { generator.get(i, j) };
                if i != j && v > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reachable_all(0, false) && reachable_all(0, true)
}

/// The number-in-system process of the BMAP/M/∞ queue: level `k` holds `k`
/// busy servers, phases track the arrival process.
#[derive(Debug, Clone)]
pub struct BmapChain {
    spec: BmapSpec,
}

pub fn bmap_generator(spec: BmapSpec) -> BmapChain {
    BmapChain { spec }
}

impl BmapChain {
    pub fn spec(&self) -> &BmapSpec {
        &self.spec
    }
}

impl BlockGenerator for BmapChain {
    fn level_dim(&self, _level: usize) -> Result<usize, ChainError> {
        Ok(self.spec.phases())
    }

    fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError> {
        let m = self.spec.phases();
        let mu = self.spec.service_rate;
        if to + 1 == from {
            return Ok(Some(Matrix::identity(m).scaled(from as f64 * mu)));
        }
        if to == from {
            let mut d0 = self.spec.arrivals[0].clone();
            for i in 0..m {
                d0.add_to(i, i, -(from as f64) * mu);
            }
            return Ok(Some(d0));
        }
        if to > from && to - from <= self.spec.max_batch() {
            return Ok(Some(self.spec.arrivals[to - from].clone()));
        }
        Ok(None)
    }

    fn upper_bandwidth(&self) -> Bandwidth {
        Bandwidth::Finite(self.spec.max_batch())
    }
}

// ---------------------------------------------------------------------------
// M/M/s retrial
// ---------------------------------------------------------------------------

/// Multiserver queue without waiting room; blocked arrivals join an orbit and
/// retry independently. Level `k` counts orbit customers, phase `i` counts
/// busy servers (`0..=servers`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrialSpec {
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub servers: usize,
    pub retrial_rate: f64,
}

impl RetrialSpec {
    pub fn new(
        arrival_rate: f64,
        service_rate: f64,
        servers: usize,
        retrial_rate: f64,
    ) -> Result<Self, ModelError> {
        for r in [arrival_rate, service_rate, retrial_rate] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(ModelError::new("all rates must be positive and finite"));
            }
        }
        if servers == 0 {
            return Err(ModelError::new("at least one server is required"));
        }
        Ok(RetrialSpec { arrival_rate, service_rate, servers, retrial_rate })
    }

    /// Offered load per server; solving requires `utilization < 1`.
    pub fn utilization(&self) -> f64 {
        self.arrival_rate / (self.servers as f64 * self.service_rate)
    }
}

#[derive(Debug, Clone)]
pub struct RetrialChain {
    spec: RetrialSpec,
}

pub fn retrial_generator(spec: RetrialSpec) -> RetrialChain {
    RetrialChain { spec }
}

impl RetrialChain {
    pub fn spec(&self) -> &RetrialSpec {
        &self.spec
    }
}

impl BlockGenerator for RetrialChain {
    fn level_dim(&self, _level: usize) -> Result<usize, ChainError> {
        Ok(self.spec.servers + 1)
    }

    fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError> {
        let s = self.spec.servers;
        let m = s + 1;
        let RetrialSpec { arrival_rate: lam, service_rate: mu, retrial_rate: eta, .. } = self.spec;
        let k = from as f64;
        if to + 1 == from {
            // A retrial succeeds only when a server is idle: one orbit
            // customer leaves, one more server becomes busy.
            let mut b = Matrix::zeros(m, m);
            for i in 0..s {
                b.set(i, i + 1, k * eta);
            }
            return Ok(Some(b));
        }
        if to == from + 1 {
            // A blocked primary arrival joins the orbit.
            let mut b = Matrix::zeros(m, m);
            b.set(s, s, lam);
            return Ok(Some(b));
        }
        if to == from {
            let mut b = Matrix::zeros(m, m);
            for i in 0..m {
                let psi = if i < s { lam + i as f64 * mu + k * eta } else { lam + s as f64 * mu };
                b.set(i, i, -psi);
                if i < s {
                    b.set(i, i + 1, lam);
                }
                if i >= 1 {
                    b.set(i, i - 1, i as f64 * mu);
                }
            }
            return Ok(Some(b));
        }
        Ok(None)
    }

    fn upper_bandwidth(&self) -> Bandwidth {
        Bandwidth::Finite(1)
    }
}

// ---------------------------------------------------------------------------
// Counterexample to fixed last-phase augmentation
// ---------------------------------------------------------------------------

/// Two-phase chain in which even levels contain a phase that cannot reach any
/// lower level without first climbing above its own level. Redirecting the
/// truncated outflow to that phase pins the whole truncation approximation on
/// it, so the fixed choice never converges while the adaptive one does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleSpec {
    pub down_rate: f64,
    pub up_rate: f64,
    pub cross_rate: f64,
}

impl CounterexampleSpec {
    pub fn new(down_rate: f64, up_rate: f64, cross_rate: f64) -> Result<Self, ModelError> {
        for r in [down_rate, up_rate, cross_rate] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(ModelError::new("all rates must be positive and finite"));
            }
        }
        Ok(CounterexampleSpec { down_rate, up_rate, cross_rate })
    }
}

impl Default for CounterexampleSpec {
    /// Strong down-rates keep the chain ergodic (confirmed against the dense
    /// reference in the test suite).
    fn default() -> Self {
        CounterexampleSpec { down_rate: 10.0, up_rate: 1.0, cross_rate: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct CounterexampleChain {
    spec: CounterexampleSpec,
}

pub fn counterexample_generator(spec: CounterexampleSpec) -> CounterexampleChain {
    CounterexampleChain { spec }
}

impl BlockGenerator for CounterexampleChain {
    fn level_dim(&self, _level: usize) -> Result<usize, ChainError> {
        Ok(2)
    }

    fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError> {
        let CounterexampleSpec { down_rate: d, up_rate: u, cross_rate: w } = self.spec;
        if to == from + 1 {
            return Ok(Some(Matrix::from_rows(&[&[u, 0.0], &[u, u]])));
        }
        if to + 1 == from {
            // Odd levels descend from both phases, even levels only from the
            // first: phase 2 of an even level must climb before it can drop.
            return Ok(Some(if from % 2 == 1 {
                Matrix::from_rows(&[&[d, 0.0], &[0.0, d]])
            } else {
                Matrix::from_rows(&[&[d, 0.0], &[0.0, 0.0]])
            }));
        }
        if to == from {
            let down = if from == 0 {
                [0.0, 0.0]
            } else if from % 2 == 1 {
                [d, d]
            } else {
                [d, 0.0]
            };
            // Row sums complete the diagonal: up-row sums are u and 2u.
            return Ok(Some(Matrix::from_rows(&[
                &[-(down[0] + w + u), w],
                &[0.0, -(down[1] + 2.0 * u)],
            ])));
        }
        Ok(None)
    }

    fn upper_bandwidth(&self) -> Bandwidth {
        Bandwidth::Finite(1)
    }
}

// ---------------------------------------------------------------------------
// Tabulated chains: explicit prefix + affine repetition
// ---------------------------------------------------------------------------

/// Matrix whose entries are affine functions of the level index:
/// `entry(k) = constant + slope * k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    constant: Vec<f64>,
    slope: Vec<f64>,
}

impl AffineMatrix {
    pub fn new(rows: usize, cols: usize, constant: Vec<f64>, slope: Vec<f64>) -> Result<Self, ModelError> {
        if constant.len() != rows * cols || slope.len() != rows * cols {
            return Err(ModelError::new("affine matrix data length must be rows*cols"));
        }
        Ok(AffineMatrix { rows, cols, constant, slope })
    }

    pub fn constant(m: &Matrix) -> Self {
        AffineMatrix {
            rows: m.rows(),
            cols: m.cols(),
            constant: m.data().to_vec(),
            slope: vec![0.0; m.rows() * m.cols()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> (&[f64], &[f64]) {
        (&self.constant, &self.slope)
    }

    pub fn eval(&self, level: usize) -> Matrix {
        let k = level as f64;
        let data = self
            .constant
            .iter()
            .zip(&self.slope)
            .map(|(&c, &s)| c + s * k)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }
}

/// Beyond the stored prefix, level `k` takes its blocks from pattern row
/// `from + (k - from) % period`, re-evaluating affine entries at `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepeatRule {
    pub from: usize,
    pub period: usize,
}

/// Chain given by explicitly declared blocks for a finite prefix of levels,
/// optionally extended to all levels by a [`RepeatRule`].
///
/// Declared blocks are stored as given; structural defects (nonzero blocks
/// below the first sub-diagonal, bad row sums) are deliberately *not*
/// rejected here so that [`crate::chain::validate_generator`] can report
/// them.
#[derive(Debug, Clone)]
pub struct ExplicitChain {
    dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), AffineMatrix>,
    repeat: Option<RepeatRule>,
    band: usize,
    /// Widths of levels just past the prefix, implied by the column counts
    /// of declared blocks that point there.
    implied_dims: BTreeMap<usize, usize>,
}

impl ExplicitChain {
    pub fn new(
        dims: Vec<usize>,
        blocks: BTreeMap<(usize, usize), AffineMatrix>,
        repeat: Option<RepeatRule>,
    ) -> Result<Self, ModelError> {
        if dims.is_empty() {
            return Err(ModelError::new("at least one level must be declared"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(ModelError::new("level widths must be positive"));
        }
        if let Some(r) = repeat {
            if r.period == 0 {
                return Err(ModelError::new("repetition period must be positive"));
            }
            if r.from + r.period > dims.len() {
                return Err(ModelError::new("repetition pattern rows must lie inside the declared prefix"));
            }
            for k in r.from..dims.len() {
                if dims[k] != dims[r.from + (k - r.from) % r.period] {
                    return Err(ModelError::new("declared widths contradict the repetition rule"));
                }
            }
        }
        let mut band = 1usize;
        let mut implied_dims = BTreeMap::new();
        for (&(k, l), b) in &blocks {
            if k >= dims.len() {
                return Err(ModelError::new("block declared for an undeclared level"));
            }
            band = band.max(l.saturating_sub(k));
            if l >= dims.len() && repeat.is_none() {
                let prior = implied_dims.insert(l, b.cols());
                if prior.is_some_and(|p| p != b.cols()) {
                    return Err(ModelError::new("blocks imply conflicting widths beyond the prefix"));
                }
            }
        }
        let chain = ExplicitChain { dims, blocks, repeat, band, implied_dims };
        // Shape-check every declared block now so later queries cannot
        // surprise callers.
        for (&(k, l), b) in &chain.blocks {
            let rows = chain.dims[k];
            let cols = chain
                .dim_at(l)
                .ok_or(ModelError::new("block column level is unreachable"))?;
            if b.rows() != rows || b.cols() != cols {
                return Err(ModelError::new("block shape disagrees with declared level widths"));
            }
        }
        Ok(chain)
    }

    fn pattern_row(&self, level: usize) -> Option<usize> {
        let r = self.repeat?;
        Some(r.from + (level - r.from) % r.period)
    }

    fn dim_at(&self, level: usize) -> Option<usize> {
        if level < self.dims.len() {
            Some(self.dims[level])
        } else if let Some(r) = self.pattern_row(level) {
            Some(self.dims[r])
        } else {
            self.implied_dims.get(&level).copied()
        }
    }

    pub fn prefix_levels(&self) -> usize {
        self.dims.len()
    }

    pub fn repeat(&self) -> Option<RepeatRule> {
        self.repeat
    }

    pub fn declared_blocks(&self) -> &BTreeMap<(usize, usize), AffineMatrix> {
        &self.blocks
    }

    pub fn declared_dims(&self) -> &[usize] {
        &self.dims
    }
}

impl BlockGenerator for ExplicitChain {
    fn level_dim(&self, level: usize) -> Result<usize, ChainError> {
        self.dim_at(level)
            .ok_or(ChainError::LevelOutOfRange { level, limit: self.dims.len() - 1 })
    }

    fn block(&self, from: usize, to: usize) -> Result<Option<Matrix>, ChainError> {
        if from < self.dims.len() {
            return Ok(self.blocks.get(&(from, to)).map(|b| b.eval(from)));
        }
        let Some(row) = self.pattern_row(from) else {
            return Err(ChainError::LevelOutOfRange { level: from, limit: self.dims.len() - 1 });
        };
        // Map the queried offset onto the pattern row. Offsets must stay
        // valid block positions: `to + 1 >= from` for Hessenberg chains.
        if to + 1 < from {
            return Ok(None);
        }
        let offset = to as isize - from as isize;
        let target = row as isize + offset;
        if target < 0 {
            return Ok(None);
        }
        Ok(self.blocks.get(&(row, target as usize)).map(|b| b.eval(from)))
    }

    fn upper_bandwidth(&self) -> Bandwidth {
        Bandwidth::Finite(self.band)
    }
}

/// Scalar birth-death chain with constant birth rate `arrival_rate` and death
/// rate `service_rate`, expressed as a tabulated chain with a repetition rule.
pub fn mm1_generator(arrival_rate: f64, service_rate: f64) -> Result<ExplicitChain, ModelError> {
    for r in [arrival_rate, service_rate] {
        if !(r > 0.0) || !r.is_finite() {
            return Err(ModelError::new("all rates must be positive and finite"));
        }
    }
    let lam = arrival_rate;
    let mu = service_rate;
    let mut blocks = BTreeMap::new();
    let c = |v: f64| AffineMatrix::constant(&Matrix::from_rows(&[&[v]]));
    blocks.insert((0, 0), c(-lam));
    blocks.insert((0, 1), c(lam));
    blocks.insert((1, 0), c(mu));
    blocks.insert((1, 1), c(-(lam + mu)));
    blocks.insert((1, 2), c(lam));
    ExplicitChain::new(vec![1, 1], blocks, Some(RepeatRule { from: 1, period: 1 }))
}
