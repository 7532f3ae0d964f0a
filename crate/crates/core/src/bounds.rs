//! Drift certificates and error diagnostics.
//!
//! A certificate witnesses the Foster-Lyapunov inequality
//! `Q v <= -1 + drift_offset * 1_C` elementwise, for a positive weight
//! function `v` bounded away from zero and a finite exception set `C`. It
//! certifies ergodicity and powers two computable diagnostics of a truncation
//! approximation at level `n`:
//!
//! - the *residual ratio* `r = (alpha . tail_weight) / (alpha . exit_time)`,
//!   whose numerator aggregates the `v`-weighted rate mass escaping above the
//!   truncation: the computable half of the error bound, minimized in closed
//!   form by [`crate::solver::optimal_augmentation`];
//! - the full *error bound* `2 (r + 2 b / (beta phi (alpha . exit_time)))` on
//!   the total variation distance to the true stationary vector, available
//!   when the caller supplies the resolvent minorization floor `phi` (it is
//!   not computable from the model data; the solver never needs it).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::chain::{checked_block, BlockGenerator, ChainError, LevelVector, TailKind};
use crate::mat::dot;
use crate::models::{BmapSpec, CounterexampleSpec, RetrialSpec};
use crate::solver::SolverState;

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateError {
    /// The model is not stable (utilization at or above one): no drift
    /// certificate exists.
    Unstable { utilization: f64 },
    /// The drift scan reached its horizon without the inequality settling in.
    ScanExhausted { horizon: usize },
    BadParameter { reason: &'static str },
    Chain(ChainError),
}

impl fmt::Display for CertificateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertificateError::Unstable { utilization } => {
                write!(f, "model is unstable: utilization {utilization} >= 1")
            }
            CertificateError::ScanExhausted { horizon } => {
                write!(f, "no drift level found within {horizon} levels; model looks non-ergodic")
            }
            CertificateError::BadParameter { reason } => write!(f, "bad certificate parameter: {reason}"),
            CertificateError::Chain(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CertificateError {}

impl From<ChainError> for CertificateError {
    fn from(e: ChainError) -> Self {
        CertificateError::Chain(e)
    }
}

/// Closed-form Lyapunov weight functions. All variants are positive and
/// bounded away from zero, as the drift condition requires.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Lyapunov {
    /// `v(k, i) = offset + slope * k`.
    Affine { offset: f64, slope: f64 },
    /// `v(k, i) = scale * ln(k + e)`.
    ScaledLog { scale: f64 },
    /// `v(k, i) = ratio^k * phase_weights[i]` (growing geometric).
    Geometric { ratio: f64, phase_weights: Vec<f64> },
}

impl Lyapunov {
    pub fn affine(offset: f64, slope: f64) -> Result<Self, CertificateError> {
        if !(offset > 0.0) || slope < 0.0 || !offset.is_finite() || !slope.is_finite() {
            return Err(CertificateError::BadParameter {
                reason: "affine weight needs positive offset and nonnegative slope",
            });
        }
        Ok(Lyapunov::Affine { offset, slope })
    }

    pub fn scaled_log(scale: f64) -> Result<Self, CertificateError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CertificateError::BadParameter { reason: "log weight needs a positive scale" });
        }
        Ok(Lyapunov::ScaledLog { scale })
    }

    pub fn geometric(ratio: f64, phase_weights: Vec<f64>) -> Result<Self, CertificateError> {
        if !(ratio >= 1.0) || !ratio.is_finite() {
            return Err(CertificateError::BadParameter {
                reason: "geometric weight needs ratio >= 1 to stay bounded away from zero",
            });
        }
        if phase_weights.is_empty() || phase_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(CertificateError::BadParameter {
                reason: "geometric weight needs positive per-phase weights",
            });
        }
        Ok(Lyapunov::Geometric { ratio, phase_weights })
    }

    pub fn value(&self, level: usize, phase: usize) -> f64 {
        match self {
            Lyapunov::Affine { offset, slope } => offset + slope * level as f64,
            Lyapunov::ScaledLog { scale } => scale * libm::log(level as f64 + core::f64::consts::E),
            Lyapunov::Geometric { ratio, phase_weights } => {
                let w = phase_weights[phase.min(phase_weights.len() - 1)];
                libm::pow(*ratio, level as f64) * w
            }
        }
    }

    /// Declared positive lower bound on `inf v`.
    pub fn floor(&self) -> f64 {
        match self {
            Lyapunov::Affine { offset, .. } => *offset,
            Lyapunov::ScaledLog { scale } => *scale, // ln(0 + e) = 1
            Lyapunov::Geometric { phase_weights, .. } => {
                phase_weights.iter().fold(f64::INFINITY, |m, &w| m.min(w))
            }
        }
    }
}

/// Which phases of a level belong to the exception set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhaseSet {
    All,
    Phases(Vec<usize>),
}

/// A finite set of states, grouped by level. Level `k` participates exactly
/// when `k < per_level.len()`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateSet {
    per_level: Vec<PhaseSet>,
}

impl StateSet {
    pub fn new(per_level: Vec<PhaseSet>) -> Result<Self, CertificateError> {
        if per_level.is_empty() {
            return Err(CertificateError::BadParameter { reason: "exception set must be nonempty" });
        }
        Ok(StateSet { per_level })
    }

    /// All phases of levels `0..=max_level`.
    pub fn full_levels(max_level: usize) -> Self {
        StateSet { per_level: vec![PhaseSet::All; max_level + 1] }
    }

    pub fn contains(&self, level: usize, phase: usize) -> bool {
        match self.per_level.get(level) {
            None => false,
            Some(PhaseSet::All) => true,
            Some(PhaseSet::Phases(ps)) => ps.contains(&phase),
        }
    }

    pub fn max_level(&self) -> usize {
        self.per_level.len() - 1
    }
}

/// Data witnessing the drift inequality `Q v <= -1 + drift_offset * 1_C`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftCertificate {
    pub lyapunov: Lyapunov,
    /// Positive offset attained on the exception set (`b`).
    pub drift_offset: f64,
    /// The finite exception set (`C`).
    pub exception_set: StateSet,
    /// Resolvent sampling rate (`beta`), only needed for the full bound.
    pub resolvent_rate: Option<f64>,
    /// User-supplied lower bound on the resolvent minorization mass over the
    /// exception set; not computable from the model data.
    pub minorization_floor: Option<f64>,
}

impl DriftCertificate {
    pub fn new(
        lyapunov: Lyapunov,
        drift_offset: f64,
        exception_set: StateSet,
    ) -> Result<Self, CertificateError> {
        if !(drift_offset > 0.0) || !drift_offset.is_finite() {
            return Err(CertificateError::BadParameter { reason: "drift offset must be positive" });
        }
        Ok(DriftCertificate {
            lyapunov,
            drift_offset,
            exception_set,
            resolvent_rate: None,
            minorization_floor: None,
        })
    }

    /// Attaches the resolvent data that turns residuals into a full bound.
    pub fn with_resolvent(mut self, rate: f64, floor: f64) -> Result<Self, CertificateError> {
        if !(rate > 0.0) || !(floor > 0.0) {
            return Err(CertificateError::BadParameter {
                reason: "resolvent rate and minorization floor must be positive",
            });
        }
        self.resolvent_rate = Some(rate);
        self.minorization_floor = Some(floor);
        Ok(self)
    }

    pub fn value(&self, level: usize, phase: usize) -> f64 {
        self.lyapunov.value(level, phase)
    }
}

/// One state whose drift exceeds the certified bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftViolation {
    pub level: usize,
    pub phase: usize,
    /// `(Qv)(level,phase) - (-1 + drift_offset * 1_C)`, positive.
    pub slack: f64,
}

impl fmt::Display for DriftViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "drift exceeds bound at level {} phase {} by {:e}", self.level, self.phase, self.slack)
    }
}

/// Outcome of checking the drift inequality over a prefix of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub checked_levels: usize,
    pub violations: Vec<DriftViolation>,
    /// Largest signed slack seen anywhere (negative when the inequality holds
    /// strictly everywhere).
    pub max_slack: f64,
    /// False when some tail sums were upper bounds (violations may then be
    /// spurious, never missed).
    pub exact: bool,
}

impl DriftReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(
                f,
                "drift inequality holds on levels 0..={} (max slack {:e})",
                self.checked_levels, self.max_slack
            )
        } else {
            writeln!(f, "{} drift violation(s) on levels 0..={}:", self.violations.len(), self.checked_levels)?;
            for v in &self.violations {
                writeln!(f, "  - {v}")?;
            }
            Ok(())
        }
    }
}

/// Evaluates `(Qv)_k` for one row of levels: in-band blocks plus the tail.
fn drift_row(
    chain: &(impl BlockGenerator + ?Sized),
    lyapunov: &Lyapunov,
    level: usize,
) -> Result<(Vec<f64>, bool), ChainError> {
    let dim = chain.level_dim(level)?;
    let mut qv = vec![0.0; dim];
    for l in level.saturating_sub(1)..=level {
        if let Some(b) = checked_block(chain, level, l)? {
            let cols = chain.level_dim(l)?;
            let v: Vec<f64> = (0..cols).map(|i| lyapunov.value(l, i)).collect();
            for (acc, x) in qv.iter_mut().zip(b.mul_vec(&v)) {
                *acc += x;
            }
        }
    }
    let tail = chain.tail_weighted_sum(&|k, i| lyapunov.value(k, i), level, level)?;
    for (acc, x) in qv.iter_mut().zip(&tail.values) {
        *acc += x;
    }
    Ok((qv, tail.kind == TailKind::Exact))
}

/// Checks `Q v <= -1 + drift_offset * 1_C` elementwise on levels
/// `0..=max_level`, within a scale-aware tolerance of `1e-9`.
pub fn check_drift(
    chain: &(impl BlockGenerator + ?Sized),
    certificate: &DriftCertificate,
    max_level: usize,
) -> Result<DriftReport, ChainError> {
    let mut violations = Vec::new();
    let mut max_slack = f64::NEG_INFINITY;
    let mut exact = true;
    for k in 0..=max_level {
        let (qv, row_exact) = drift_row(chain, &certificate.lyapunov, k)?;
        exact &= row_exact;
        for (i, &lhs) in qv.iter().enumerate() {
            let rhs = -1.0
                + if certificate.exception_set.contains(k, i) { certificate.drift_offset } else { 0.0 };
            let slack = lhs - rhs;
            max_slack = max_slack.max(slack);
            let tol = 1e-9 * libm::fabs(lhs).max(libm::fabs(rhs)).max(1.0);
            if slack > tol {
                violations.push(DriftViolation { level: k, phase: i, slack });
            }
        }
    }
    Ok(DriftReport { checked_levels: max_level, violations, max_slack, exact })
}

/// The per-phase weights `v_n + sum_k sojourn[k] * (v-weighted outflow above
/// n from level k)`, the numerator of the residual ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct TailWeight {
    pub values: Vec<f64>,
    /// False when any tail sum was an elementwise upper bound; the residual
    /// is then itself an upper bound (the update algorithm still works).
    pub exact: bool,
}

/// Computes the tail weight vector at the state's truncation level. Strictly
/// positive by construction. For tridiagonal-block chains this reduces to
/// `v_n + top_block * Q_{n,n+1} * v_{n+1}` with no infinite sums.
pub fn tail_weight(
    state: &SolverState,
    chain: &(impl BlockGenerator + ?Sized),
    certificate: &DriftCertificate,
) -> Result<TailWeight, ChainError> {
    let n = state.level();
    let dim = chain.level_dim(n)?;
    let mut y: Vec<f64> = (0..dim).map(|i| certificate.value(n, i)).collect();
    let lo = match chain.upper_bandwidth() {
        crate::chain::Bandwidth::Finite(b) => n.saturating_sub(b.saturating_sub(1)),
        crate::chain::Bandwidth::Unbounded => 0,
    };
    let mut exact = true;
    for k in lo..=n {
        let tail = chain.tail_weighted_sum(&|l, i| certificate.value(l, i), k, n)?;
        exact &= tail.kind == TailKind::Exact;
        if tail.values.iter().all(|&x| x == 0.0) {
            continue;
        }
        for (acc, x) in y.iter_mut().zip(state.sojourn_block(k).mul_vec(&tail.values)) {
            *acc += x;
        }
    }
    Ok(TailWeight { values: y, exact })
}

/// Residual ratio `(alpha . tail_weight) / (alpha . exit_time)`: for the
/// optimal augmentation this is the minimum of the per-phase ratios, and it
/// vanishes as the truncation level grows.
pub fn residual(state: &SolverState, augmentation: &[f64], tail_weight: &[f64]) -> f64 {
    dot(augmentation, tail_weight) / dot(augmentation, state.exit_time())
}

/// `(full_bound, computable_part)`: the computable part is `2 r`; the full
/// total-variation bound `2 (r + 2b / (beta * phi * alpha.exit_time))` needs
/// the resolvent data and is absent otherwise.
pub fn error_bound(
    state: &SolverState,
    certificate: &DriftCertificate,
    augmentation: &[f64],
    tail_weight: &[f64],
) -> (Option<f64>, f64) {
    let r = residual(state, augmentation, tail_weight);
    let computable = 2.0 * r;
    let full = match (certificate.resolvent_rate, certificate.minorization_floor) {
        (Some(beta), Some(phi)) => {
            let mass = dot(augmentation, state.exit_time());
            Some(2.0 * (r + 2.0 * certificate.drift_offset / (beta * phi * mass)))
        }
        _ => None,
    };
    (full, computable)
}

/// Partial sums of `pi_hat_k * |diag(Q_{k,k})| * v_k` over the levels the
/// approximation spans: a monotone nondecreasing convergence diagnostic (the
/// summability condition itself is not finitely decidable).
pub fn condition2_partial(
    chain: &(impl BlockGenerator + ?Sized),
    certificate: &DriftCertificate,
    pi_hat: &LevelVector,
) -> Result<Vec<f64>, ChainError> {
    let mut sums = Vec::with_capacity(pi_hat.num_levels());
    let mut acc = 0.0;
    for k in 0..pi_hat.num_levels() {
        let seg = pi_hat.segment(k);
        let diag = checked_block(chain, k, k)?;
        for (i, &p) in seg.iter().enumerate() {
            let rate = diag.as_ref().map_or(0.0, |b| libm::fabs(b.get(i, i)));
            acc += p * rate * certificate.value(k, i);
        }
        sums.push(acc);
    }
    Ok(sums)
}

// ---------------------------------------------------------------------------
// Certificate constructors for the bundled models
// ---------------------------------------------------------------------------

/// Scans drifts of `lyapunov` along the chain and returns the smallest level
/// beyond which `Qv <= -1` holds up to `horizon`, plus the offset needed on
/// the earlier levels.
fn scan_exception_boundary(
    chain: &(impl BlockGenerator + ?Sized),
    lyapunov: &Lyapunov,
    horizon: usize,
) -> Result<(usize, f64), CertificateError> {
    let mut last_violation: Option<usize> = None;
    let mut max_drift = f64::NEG_INFINITY;
    let mut drifts = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let (qv, _) = drift_row(chain, lyapunov, k)?;
        let worst = qv.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        drifts.push(worst);
        if worst > -1.0 {
            last_violation = Some(k);
        }
    }
    let boundary = match last_violation {
        None => 0,
        // Leave margin so the tail of the scan vouches for the inequality.
        Some(k) if k + 10 > horizon => {
            return Err(CertificateError::ScanExhausted { horizon })
        }
        Some(k) => k,
    };
    for &d in drifts.iter().take(boundary + 1) {
        max_drift = max_drift.max(d);
    }
    Ok((boundary, max_drift))
}

/// Certificate for the number-in-system process of a BMAP/M/∞ queue.
///
/// The weight is `max(1, 2/mu) * ln(k + e)`: slow service makes the
/// unscaled log drift settle at `-mu`, which never clears `-1`, so the
/// scale restores a strict margin for every service rate. The exception
/// boundary and offset come from a numeric scan; the offset carries 10%
/// headroom against rounding.
pub fn bmap_certificate(spec: &BmapSpec) -> Result<DriftCertificate, CertificateError> {
    let scale = 1.0f64.max(2.0 / spec.service_rate());
    let lyapunov = Lyapunov::scaled_log(scale)?;
    let chain = crate::models::bmap_generator(spec.clone());
    let horizon = 1000usize.max(50 * spec.phases());
    let (boundary, max_drift) = scan_exception_boundary(&chain, &lyapunov, horizon)?;
    let offset = 1.1 * (max_drift + 1.0).max(1e-9);
    DriftCertificate::new(lyapunov, offset, StateSet::full_levels(boundary))
}

/// Certificate for the M/M/s retrial queue, valid whenever the utilization
/// is below one.
///
/// The weight is geometric in the orbit size with a boosted weight for the
/// all-busy phase: `v(k,i) = ratio^k / c` for idle capacity and
/// `ratio^k / (c*gamma)` when all servers are busy. The free constants are
/// fixed at the midpoints of their admissible open intervals, which keeps
/// `c` safely positive and the construction deterministic.
pub fn retrial_certificate(spec: &RetrialSpec) -> Result<DriftCertificate, CertificateError> {
    let rho = spec.utilization();
    if rho >= 1.0 {
        return Err(CertificateError::Unstable { utilization: rho });
    }
    let s = spec.servers;
    let (lam, mu, eta) = (spec.arrival_rate, spec.service_rate, spec.retrial_rate);

    let ratio = (1.0 + 1.0 / rho) / 2.0;
    let gamma_lo = 1.0 / ratio;
    let gamma_hi = 1.0 - rho * (ratio - 1.0);
    let gamma = 0.5 * (gamma_lo + gamma_hi);
    let c = s as f64 * mu * (1.0 - rho * (ratio - 1.0) - gamma);
    debug_assert!(c > 0.0);

    let boundary_raw = (c + lam * (1.0 / gamma - 1.0)) / (eta * (1.0 - 1.0 / (gamma * ratio)));
    let boundary = (libm::ceil(boundary_raw).max(1.0) - 1.0) as usize;

    let mut offset: f64 = 0.0;
    for k in 0..=boundary {
        let kf = k as f64;
        let excess = libm::pow(ratio, kf)
            * (1.0 - (kf * eta * (1.0 - 1.0 / (gamma * ratio)) + lam * (1.0 - 1.0 / gamma)) / c);
        offset = offset.max(excess);
    }

    let mut phase_weights = vec![1.0 / c; s + 1];
    phase_weights[s] = 1.0 / (c * gamma);
    let lyapunov = Lyapunov::geometric(ratio, phase_weights)?;
    DriftCertificate::new(lyapunov, offset.max(1e-9), StateSet::full_levels(boundary))
}

/// Certificate for the two-phase counterexample chain.
///
/// A geometric weight `scale * ratio^k * (1, t)` works once the phase-2
/// weight `t` lies in an open interval determined by the rates; the interval
/// is nonempty for any ratio close enough to one, found by halving. The
/// scale then pushes every off-exception drift at or below `-1` with 10%
/// headroom, and only level 0 needs an offset.
pub fn counterexample_certificate(
    spec: &CounterexampleSpec,
) -> Result<DriftCertificate, CertificateError> {
    let CounterexampleSpec { down_rate: d, up_rate: u, cross_rate: w } = *spec;
    let mut delta = 0.1;
    let mut chosen = None;
    for _ in 0..40 {
        let ratio = 1.0 + delta;
        let lo = 2.0 * (ratio - 1.0) / (2.0 - ratio);
        let hi = (ratio - 1.0) * (d / ratio - u) / w;
        if lo < hi {
            chosen = Some((ratio, 1.0 + 0.5 * (lo + hi)));
            break;
        }
        delta *= 0.5;
    }
    let Some((ratio, t)) = chosen else {
        return Err(CertificateError::BadParameter {
            reason: "no geometric weight exists: down rate too weak against up/cross rates",
        });
    };

    // Per-parity drift coefficients of the unscaled weight (1, t).
    let c_phase1 = d / ratio - (d + w + u) + w * t + u * ratio;
    let c_phase2_odd = t * d / ratio - (d + 2.0 * u) * t + u * ratio * (1.0 + t);
    let c_phase2_even = u * (ratio * (1.0 + t) - 2.0 * t);
    let c_level0_phase1 = -(w + u) + w * t + u * ratio;
    let tightest = (-c_phase1).min(-c_phase2_odd).min(-c_phase2_even);
    if !(tightest > 0.0) {
        return Err(CertificateError::BadParameter {
            reason: "geometric weight interval produced a nonnegative drift coefficient",
        });
    }
    let scale = 1.1 / tightest;
    let offset = 1.1 * (scale * c_level0_phase1 + 1.0).max(1e-9);
    let lyapunov = Lyapunov::geometric(ratio, vec![scale, scale * t])?;
    DriftCertificate::new(lyapunov, offset, StateSet::full_levels(0))
}

/// Certificate for the scalar birth-death chain with constant rates: an
/// affine weight with slope `1/(mu - lambda)` gives drift exactly `-1` off
/// level zero.
pub fn mm1_certificate(arrival_rate: f64, service_rate: f64) -> Result<DriftCertificate, CertificateError> {
    if !(arrival_rate > 0.0 && service_rate > 0.0) {
        return Err(CertificateError::BadParameter { reason: "rates must be positive" });
    }
    if arrival_rate >= service_rate {
        return Err(CertificateError::Unstable { utilization: arrival_rate / service_rate });
    }
    let slope = 1.0 / (service_rate - arrival_rate);
    let lyapunov = Lyapunov::affine(slope, slope)?;
    let offset = 1.1 * (arrival_rate * slope + 1.0);
    DriftCertificate::new(lyapunov, offset, StateSet::full_levels(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::solver::SolverState;

    fn mm1_cert_by_hand() -> DriftCertificate {
        // v_k = k + 1, offset 2, exception set = level 0.
        DriftCertificate::new(
            Lyapunov::affine(1.0, 1.0).unwrap(),
            2.0,
            StateSet::full_levels(0),
        )
        .unwrap()
    }

    #[test]
    fn drift_holds_for_the_scalar_birth_death_witness() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let report = check_drift(&chain, &mm1_cert_by_hand(), 50).unwrap();
        assert!(report.is_clean(), "{report}");
        assert!(report.exact);
    }

    #[test]
    fn too_small_offset_is_reported_with_slack() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut cert = mm1_cert_by_hand();
        cert.drift_offset = 0.5;
        let report = check_drift(&chain, &cert, 50).unwrap();
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!((v.level, v.phase), (0, 0));
        // (Qv)_0 = 1 against -1 + 0.5.
        assert!((v.slack - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tail_weight_of_scalar_chain_by_hand() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        let w = tail_weight(&st, &chain, &mm1_cert_by_hand()).unwrap();
        // v_1 + top * (lam * v_2) = 2 + 1*1*3 = 5.
        assert!(w.exact);
        assert_eq!(w.values.len(), 1);
        assert!((w.values[0] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn tail_weight_reduces_to_single_term_for_tridiagonal_chains() {
        let spec = models::RetrialSpec::new(1.0, 1.0, 2, 1.0).unwrap();
        let chain = models::retrial_generator(spec);
        let cert = retrial_certificate(&spec).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        for _ in 0..4 {
            st.advance(&chain).unwrap();
        }
        let w = tail_weight(&st, &chain, &cert).unwrap();
        let n = st.level();
        let up = chain.block(n, n + 1).unwrap().unwrap();
        let vnext: Vec<f64> = (0..3).map(|i| cert.value(n + 1, i)).collect();
        let mut expect: Vec<f64> = (0..3).map(|i| cert.value(n, i)).collect();
        for (e, x) in expect.iter_mut().zip(st.top_block().mul(&up).mul_vec(&vnext)) {
            *e += x;
        }
        for (a, b) in w.values.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn tail_weight_without_upward_blocks_is_the_weight_itself() {
        // No up-block out of level 1 means an empty tail; such a level is not
        // censorable by advancing, so assemble the state directly.
        use crate::mat::Matrix;
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        let c = |m: &Matrix| AffineMatrix::constant(m);
        let mut b = BTreeMap::new();
        b.insert((0, 0), c(&Matrix::from_rows(&[&[-1.0]])));
        b.insert((0, 1), c(&Matrix::from_rows(&[&[1.0]])));
        b.insert((1, 0), c(&Matrix::from_rows(&[&[2.0]])));
        b.insert((1, 1), c(&Matrix::from_rows(&[&[-2.0]])));
        let chain = ExplicitChain::new(vec![1, 1], b, None).unwrap();
        let st = SolverState::from_raw(
            1,
            vec![Matrix::from_rows(&[&[3.0]]), Matrix::from_rows(&[&[1.5]])],
            vec![4.5],
        );
        let w = tail_weight(&st, &chain, &mm1_cert_by_hand()).unwrap();
        assert_eq!(w.values, vec![2.0]);
    }

    #[test]
    fn residual_examples() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        // exit_time = [3], tail weight [5].
        assert!((residual(&st, &[1.0], &[5.0]) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn error_bound_arithmetic_and_optional_branch() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        let cert = mm1_cert_by_hand();
        let (absent, computable) = error_bound(&st, &cert, &[1.0], &[5.0]);
        assert!(absent.is_none());
        assert!((computable - 2.0 * 5.0 / 3.0).abs() < 1e-15);
        let cert = cert.with_resolvent(1.0, 0.1).unwrap();
        let (full, computable) = error_bound(&st, &cert, &[1.0], &[5.0]);
        // 2*(5/3 + (1/3)*2*2/(1*0.1)) = 30.
        assert!((full.unwrap() - 30.0).abs() < 1e-12);
        assert!((computable - 10.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn doubling_the_offset_doubles_the_resolvent_term_exactly() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let mut st = SolverState::init(&chain).unwrap();
        st.advance(&chain).unwrap();
        let base = mm1_cert_by_hand().with_resolvent(1.0, 0.1).unwrap();
        let mut doubled = base.clone();
        doubled.drift_offset *= 2.0;
        let (e1, c1) = error_bound(&st, &base, &[1.0], &[5.0]);
        let (e2, c2) = error_bound(&st, &doubled, &[1.0], &[5.0]);
        assert_eq!(c1, c2);
        assert_eq!(e2.unwrap() - c2, 2.0 * (e1.unwrap() - c1));
    }

    #[test]
    fn partial_sums_are_monotone_with_decreasing_increments() {
        let chain = models::mm1_generator(1.0, 2.0).unwrap();
        let cert = mm1_cert_by_hand();
        let rho: f64 = 0.5;
        let segs: Vec<Vec<f64>> = (0..20).map(|k| vec![0.5 * libm::pow(rho, k as f64)]).collect();
        let pi = crate::chain::LevelVector::probability(segs);
        // Geometric mass has a tiny tail deficit at 20 levels; accept it.
        let pi = match pi {
            Ok(p) => p,
            Err(_) => crate::chain::LevelVector::sub_probability(
                (0..20).map(|k| vec![0.5 * libm::pow(rho, k as f64)]).collect(),
            )
            .unwrap(),
        };
        let sums = condition2_partial(&chain, &cert, &pi).unwrap();
        assert_eq!(sums.len(), 20);
        for w in sums.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // Increments shrink geometrically beyond the first few levels.
        for k in 6..19 {
            let inc1 = sums[k] - sums[k - 1];
            let inc2 = sums[k + 1] - sums[k];
            assert!(inc2 < inc1);
        }
    }

    #[test]
    fn single_level_partial_sum() {
        use crate::models::{AffineMatrix, ExplicitChain};
        use alloc::collections::BTreeMap;
        use crate::mat::Matrix;
        let mut b = BTreeMap::new();
        b.insert((0, 0), AffineMatrix::constant(&Matrix::from_rows(&[&[-1.0]])));
        b.insert((0, 1), AffineMatrix::constant(&Matrix::from_rows(&[&[1.0]])));
        let chain = ExplicitChain::new(vec![1], b, None).unwrap();
        let cert = mm1_cert_by_hand();
        let pi = crate::chain::LevelVector::probability(vec![vec![1.0]]).unwrap();
        let sums = condition2_partial(&chain, &cert, &pi).unwrap();
        assert_eq!(sums, vec![1.0]);
    }

    #[test]
    fn retrial_certificate_constants_by_hand() {
        let spec = models::RetrialSpec::new(1.0, 2.0, 1, 3.0).unwrap();
        let cert = retrial_certificate(&spec).unwrap();
        let Lyapunov::Geometric { ratio, phase_weights } = &cert.lyapunov else {
            panic!("expected a geometric weight");
        };
        assert!((ratio - 1.5).abs() < 1e-15);
        let gamma = 17.0 / 24.0;
        let c = 2.0 * (1.0 - 0.25 - gamma);
        assert!((phase_weights[0] - 1.0 / c).abs() < 1e-9);
        assert!((phase_weights[1] - 1.0 / (c * gamma)).abs() < 1e-9);
    }

    #[test]
    fn retrial_certificate_requires_stability() {
        let spec = models::RetrialSpec::new(3.0, 1.0, 2, 1.0).unwrap();
        assert!(matches!(
            retrial_certificate(&spec),
            Err(CertificateError::Unstable { .. })
        ));
    }

    #[test]
    fn retrial_certificate_near_saturation_still_constructs() {
        let spec = models::RetrialSpec::new(0.999, 1.0, 1, 1.0).unwrap();
        let cert = retrial_certificate(&spec).unwrap();
        assert!(cert.drift_offset > 0.0);
    }

    #[test]
    fn bmap_certificate_scan_on_slow_service() {
        let d0 = crate::mat::Matrix::from_rows(&[&[-2.0]]);
        let d1 = crate::mat::Matrix::from_rows(&[&[2.0]]);
        let spec = models::BmapSpec::new(vec![d0, d1], 1.0).unwrap();
        let cert = bmap_certificate(&spec).unwrap();
        let chain = models::bmap_generator(spec);
        let report = check_drift(&chain, &cert, 200).unwrap();
        assert!(report.is_clean(), "{report}");
    }

    #[test]
    fn bmap_certificate_with_fast_service_has_a_tiny_exception_set() {
        let d0 = crate::mat::Matrix::from_rows(&[&[-1.0]]);
        let d1 = crate::mat::Matrix::from_rows(&[&[1.0]]);
        let spec = models::BmapSpec::new(vec![d0, d1], 100.0).unwrap();
        let cert = bmap_certificate(&spec).unwrap();
        assert!(cert.exception_set.max_level() <= 1);
    }

    #[test]
    fn bmap_certificate_scan_fails_when_service_is_negligible() {
        let d0 = crate::mat::Matrix::from_rows(&[&[-1.0]]);
        let d1 = crate::mat::Matrix::from_rows(&[&[1.0]]);
        let spec = models::BmapSpec::new(vec![d0, d1], 1e-12).unwrap();
        assert!(matches!(
            bmap_certificate(&spec),
            Err(CertificateError::ScanExhausted { .. })
        ));
    }
}
