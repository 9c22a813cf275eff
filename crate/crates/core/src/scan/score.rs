//! Bernoulli log-likelihood ratio score for a single subgroup.
//!
//! Under the alternative, the odds of every record in the subgroup are
//! multiplied by a common `q`. The score is
//!
//! ```text
//! F(S) = max_{0<q<1}  Σ y_i log q − Σ log(1 − p_i + q p_i)
//! ```
//!
//! Only over-estimation (`q < 1`) is scored; any subgroup with
//! `Σ y ≥ Σ p` scores zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper end of the bracket used for the MLE of `q`.
pub const Q_BRACKET: (f64, f64) = (1e-12, 1e12);

/// Absolute residual (in units of `Σ y`) accepted by the MLE solver.
pub const Q_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// A block of records sharing one probability: `count` records of which
/// `positives` have `y = 1`. A single record is a cell with `count = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub count: f64,
    pub positives: f64,
    pub p: f64,
}

impl Cell {
    pub fn record(y: bool, p: f64) -> Self {
        Cell {
            count: 1.0,
            positives: if y { 1.0 } else { 0.0 },
            p,
        }
    }

    pub fn new(count: f64, positives: f64, p: f64) -> Self {
        Cell {
            count,
            positives,
            p,
        }
    }
}

pub fn cells_from_records(group: &[(bool, f64)]) -> Vec<Cell> {
    group.iter().map(|&(y, p)| Cell::record(y, p)).collect()
}

/// Unconstrained maximum-likelihood odds multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QMle {
    /// `Σ y = 0`: the likelihood increases as `q → 0⁺`.
    ZeroLimit,
    Finite(f64),
    /// `Σ y = Σ count`: the likelihood increases without bound in `q`.
    Infinite,
}

impl QMle {
    pub fn value(self) -> f64 {
        match self {
            QMle::ZeroLimit => 0.0,
            QMle::Finite(q) => q,
            QMle::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEval {
    pub score: f64,
    /// Fitted `q` clamped to `(0, 1]`; `1` means no over-estimation signal.
    /// When `boundary` is set the fit is the `q → 0⁺` limit and `q_hat`
    /// is reported as `0`.
    pub q_hat: f64,
    pub boundary: bool,
    pub n_records: u64,
    pub n_positives: u64,
}

impl ScoreEval {
    pub fn zero(n_records: u64, n_positives: u64) -> Self {
        ScoreEval {
            score: 0.0,
            q_hat: 1.0,
            boundary: false,
            n_records,
            n_positives,
        }
    }
}

struct Totals {
    count: f64,
    positives: f64,
    expected: f64,
}

fn totals(cells: &[Cell]) -> Totals {
    cells.iter().fold(
        Totals {
            count: 0.0,
            positives: 0.0,
            expected: 0.0,
        },
        |t, c| Totals {
            count: t.count + c.count,
            positives: t.positives + c.positives,
            expected: t.expected + c.count * c.p,
        },
    )
}

/// `Σ count · q p / (q p + 1 − p)`, the expected positives under odds
/// multiplier `q`, and its derivative in `log q`.
fn expected_and_slope(cells: &[Cell], q: f64) -> (f64, f64) {
    cells.iter().fold((0.0, 0.0), |(e, s), c| {
        let denom = q * c.p + 1.0 - c.p;
        let r = q * c.p / denom;
        (e + c.count * r, s + c.count * r * (1.0 - c.p) / denom)
    })
}

/// Solves `Σ y = Σ q p / (q p + 1 − p)` for `q`.
pub fn solve_q_mle(cells: &[Cell]) -> Result<QMle> {
    let t = totals(cells);
    if cells.is_empty() || t.count <= 0.0 {
        return Err(Error::precondition("cannot fit q on an empty group"));
    }
    if t.positives <= 0.0 {
        return Ok(QMle::ZeroLimit);
    }
    if t.positives >= t.count {
        return Ok(QMle::Infinite);
    }
    Ok(QMle::Finite(solve_finite(cells, t.positives, t.expected)))
}

/// Safeguarded Newton iteration in `log q` inside the fixed bracket. The map
/// `q ↦ expected(q)` is strictly increasing, so the bracket always shrinks.
fn solve_finite(cells: &[Cell], target: f64, expected_at_one: f64) -> f64 {
    let (mut lo, mut hi) = (Q_BRACKET.0.ln(), Q_BRACKET.1.ln());
    let tol = Q_RESIDUAL_TOLERANCE.max(1e-15 * target);
    let mut t = (target / expected_at_one).ln().clamp(lo, hi);
    for _ in 0..200 {
        let (e, slope) = expected_and_slope(cells, t.exp());
        let resid = e - target;
        if resid.abs() <= tol {
            break;
        }
        if resid < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - resid / slope;
        t = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            break;
        }
    }
    t.exp()
}

/// `Σ y log q − Σ log(1 − p + q p)`.
pub fn log_likelihood_ratio(cells: &[Cell], q: f64) -> f64 {
    let lq = q.ln();
    cells
        .iter()
        .map(|c| c.positives * lq - c.count * (c.p * (q - 1.0)).ln_1p())
        .sum()
}

/// Limit of the log-likelihood ratio as `q → 0⁺` for a group with no
/// positives: `−Σ log(1 − p)`.
pub fn zero_limit_score(cells: &[Cell]) -> f64 {
    cells.iter().map(|c| -c.count * (-c.p).ln_1p()).sum()
}

/// `F(S)` with the fitted `q`.
pub fn score_cells(cells: &[Cell]) -> ScoreEval {
    let t = totals(cells);
    let n = t.count.round() as u64;
    let y = t.positives.round() as u64;
    if t.count <= 0.0 || t.positives >= t.expected {
        return ScoreEval::zero(n, y);
    }
    if t.positives <= 0.0 {
        return ScoreEval {
            score: zero_limit_score(cells),
            q_hat: 0.0,
            boundary: true,
            n_records: n,
            n_positives: y,
        };
    }
    let q = solve_finite(cells, t.positives, t.expected).min(1.0);
    let score = log_likelihood_ratio(cells, q);
    if q >= 1.0 || score <= 0.0 {
        return ScoreEval::zero(n, y);
    }
    ScoreEval {
        score,
        q_hat: q,
        boundary: false,
        n_records: n,
        n_positives: y,
    }
}

/// `F(S)` over raw `(y, p)` records. An empty group scores 0.
pub fn score_subgroup(group: &[(bool, f64)]) -> ScoreEval {
    score_cells(&cells_from_records(group))
}
