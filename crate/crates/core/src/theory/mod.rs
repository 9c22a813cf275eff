//! Closed-form companions to the scan: the score a subgroup reaches after
//! its training odds are multiplied by `Δ`, the null critical value `h(α)`,
//! and the smallest `Δ` whose propagated score crosses it.

pub mod normal;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{log_likelihood_ratio, solve_q_mle, zero_limit_score, Cell, QMle};

/// Below this many profiles the Gaussian approximation behind `h(α)` is
/// flagged as unreliable.
pub const MIN_GAUSSIAN_PROFILES: usize = 30;

pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Tolerance, in score units, for the `Δ_thresh` root.
pub const DELTA_ROOT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConstants {
    pub k1: f64,
    pub k2: f64,
    pub k2_squared: f64,
    /// Maximizing truncation points.
    pub beta_k1: f64,
    pub beta_k2: f64,
}

/// Mean bound of one censored profile contribution as a function of the
/// truncation point `β < 0`.
pub fn censored_mean(beta: f64) -> f64 {
    -2.0 * beta * normal::pdf(-beta) - 2.0 * beta * beta * normal::sf(-beta)
}

/// Variance bound of one censored profile contribution.
pub fn censored_variance(beta: f64) -> f64 {
    let h = normal::hazard(-beta);
    4.0 * beta * beta
        * normal::sf(-beta)
        * (1.0 - beta * h - h * h + (beta + h).powi(2) * normal::cdf(-beta))
}

fn maximize(f: impl Fn(f64) -> f64, step: f64) -> (f64, f64) {
    let (lo, hi) = (-5.0_f64, 0.0_f64);
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (lo, f(lo));
    for i in 1..n {
        let b = lo + i as f64 * step;
        let v = f(b);
        if v > best.1 {
            best = (b, v);
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `k1`, `k2` by grid search on `β ∈ [−5, 0]` with the given step, then
/// golden-section refinement.
pub fn threshold_constants_with_step(step: f64) -> ThresholdConstants {
    let (beta_k1, k1) = maximize(censored_mean, step);
    let (beta_k2, k2_squared) = maximize(censored_variance, step);
    ThresholdConstants {
        k1,
        k2: k2_squared.sqrt(),
        k2_squared,
        beta_k1,
        beta_k2,
    }
}

/// Cached constants at the default grid step.
pub fn threshold_constants() -> ThresholdConstants {
    static CONSTANTS: OnceLock<ThresholdConstants> = OnceLock::new();
    *CONSTANTS.get_or_init(|| threshold_constants_with_step(DEFAULT_GRID_STEP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub alpha: f64,
    pub m: usize,
    pub k1: f64,
    pub k2: f64,
    pub h_alpha: f64,
    /// `M` is too small for the Gaussian approximation to be trusted.
    pub small_m_warning: bool,
}

/// `h(α) = k1·M + k2·Φ⁻¹(1−α)·√M` with the derived constants.
pub fn critical_value(m: usize, alpha: f64) -> Result<ThresholdSpec> {
    let c = threshold_constants();
    critical_value_with(m, alpha, c.k1, c.k2)
}

/// [`critical_value`] with user-supplied constants, e.g. the rounded
/// `0.202` / `0.523`.
pub fn critical_value_with(m: usize, alpha: f64, k1: f64, k2: f64) -> Result<ThresholdSpec> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    if !(k1 > 0.0 && k2 > 0.0) {
        return Err(Error::invalid("k1 and k2 must be positive"));
    }
    let mf = m as f64;
    Ok(ThresholdSpec {
        alpha,
        m,
        k1,
        k2,
        h_alpha: k1 * mf + k2 * normal::quantile(1.0 - alpha) * mf.sqrt(),
        small_m_warning: m <= MIN_GAUSSIAN_PROFILES,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    /// Log-likelihood ratio at the unconstrained `q̂_MLE` of the unbiased
    /// data. Equals the scan score whenever `q̂_MLE < 1`.
    pub f_old: f64,
    pub f_theo: f64,
    /// `min(q̂_MLE, 1)`; 0 encodes the `q → 0⁺` limit.
    pub q_hat_unbiased: f64,
    /// Unconstrained `q̂_MLE`, possibly above 1.
    pub q_mle: f64,
    pub delta: f64,
    /// `Δ > q̂_MLE`.
    pub applicable: bool,
}

/// Unbiased-data fit shared by the propagation formulas.
#[derive(Debug, Clone)]
struct UnbiasedFit {
    cells: Vec<Cell>,
    positives: f64,
    q_mle: f64,
    f_old: f64,
}

fn validate_group(group: &[(bool, f64)]) -> Result<()> {
    if group.is_empty() {
        return Err(Error::precondition("target group is empty"));
    }
    if let Some(&(_, p)) = group.iter().find(|&&(_, p)| !(p > 0.0 && p < 1.0)) {
        return Err(Error::precondition(format!("probability {p} outside (0, 1)")));
    }
    Ok(())
}

fn fit_unbiased(group: &[(bool, f64)]) -> Result<UnbiasedFit> {
    validate_group(group)?;
    let cells: Vec<Cell> = group.iter().map(|&(y, p)| Cell::record(y, p)).collect();
    let positives = cells.iter().map(|c| c.positives).sum();
    let (q_mle, f_old) = match solve_q_mle(&cells)? {
        QMle::ZeroLimit => (0.0, zero_limit_score(&cells)),
        QMle::Finite(q) => (q, log_likelihood_ratio(&cells, q).max(0.0)),
        QMle::Infinite => {
            return Err(Error::precondition(
                "every record in the target group is positive; the propagated score is undefined",
            ))
        }
    };
    Ok(UnbiasedFit {
        cells,
        positives,
        q_mle,
        f_old,
    })
}

/// `Q(Δ) = Σ log(Δ p + 1 − p) − Σ y log Δ`.
fn q_function(fit: &UnbiasedFit, delta: f64) -> f64 {
    let spread: f64 = fit
        .cells
        .iter()
        .map(|c| c.count * (c.p * (delta - 1.0)).ln_1p())
        .sum();
    spread - fit.positives * delta.ln()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta >= 1.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be a finite value >= 1, got {delta}")));
    }
    Ok(())
}

/// Asymptotic score of the target subgroup after odds-multiplying bias
/// `delta` in training, computed from unbiased `(y, p)` records.
pub fn theoretical_score(group: &[(bool, f64)], delta: f64) -> Result<TheoryReport> {
    check_delta(delta)?;
    let fit = fit_unbiased(group)?;
    Ok(report_for(&fit, delta))
}

fn report_for(fit: &UnbiasedFit, delta: f64) -> TheoryReport {
    let applicable = delta > fit.q_mle;
    let f_theo = if applicable {
        (fit.f_old + q_function(fit, delta)).max(0.0)
    } else {
        0.0
    };
    TheoryReport {
        f_old: fit.f_old,
        f_theo,
        q_hat_unbiased: fit.q_mle.min(1.0),
        q_mle: fit.q_mle,
        delta,
        applicable,
    }
}

/// Limit of `F(S)/|D|`: `P(x∈S) · Σ w (log(Δp + 1 − p) − p log Δ)`.
pub fn asymptotic_normalized_score(
    delta: f64,
    mass_in_subgroup: f64,
    profile_dist: &[(f64, f64)],
) -> Result<f64> {
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&mass_in_subgroup) {
        return Err(Error::invalid("P(x in S) must lie in [0, 1]"));
    }
    if profile_dist.is_empty() {
        return Err(Error::invalid("empty profile distribution"));
    }
    let total: f64 = profile_dist.iter().map(|&(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 || profile_dist.iter().any(|&(_, w)| w < 0.0) {
        return Err(Error::invalid(format!("profile weights must sum to 1, got {total}")));
    }
    if profile_dist.iter().any(|&(p, _)| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid("profile probabilities must lie in (0, 1)"));
    }
    let ld = delta.ln();
    let expectation: f64 = profile_dist
        .iter()
        .map(|&(p, w)| w * ((p * (delta - 1.0)).ln_1p() - p * ld))
        .sum();
    Ok(mass_in_subgroup * expectation)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaThresholdResult {
    pub delta_thresh: f64,
    /// `Q(Δ_thresh)`.
    pub q_function_at_solution: f64,
    pub f_old: f64,
    pub h_alpha: f64,
}

/// Smallest `Δ ≥ 1` whose propagated score reaches `h(α)` for this group.
pub fn delta_threshold(group: &[(bool, f64)], alpha: f64, m: usize) -> Result<DeltaThresholdResult> {
    let spec = critical_value(m, alpha)?;
    delta_threshold_for(group, spec.h_alpha)
}

/// [`delta_threshold`] against an explicit critical value.
pub fn delta_threshold_for(group: &[(bool, f64)], h_alpha: f64) -> Result<DeltaThresholdResult> {
    let fit = fit_unbiased(group)?;
    let lower = fit.q_mle.max(1.0);
    let f_at = |delta: f64| report_for(&fit, delta).f_theo;
    if f_at(1.0) >= h_alpha {
        return Ok(DeltaThresholdResult {
            delta_thresh: 1.0,
            q_function_at_solution: q_function(&fit, 1.0),
            f_old: fit.f_old,
            h_alpha,
        });
    }
    // Q grows without bound above q̂, so doubling always brackets the root.
    let mut lo = lower;
    let mut hi = 2.0 * lower;
    let mut doublings = 0;
    while f_at(hi) < h_alpha {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        assert!(doublings < 2000, "delta threshold could not be bracketed");
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let gap = f_at(mid) - h_alpha;
        if gap.abs() <= DELTA_ROOT_TOLERANCE {
            break;
        }
        if gap < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(DeltaThresholdResult {
        delta_thresh: mid,
        q_function_at_solution: q_function(&fit, mid),
        f_old: fit.f_old,
        h_alpha,
    })
}
