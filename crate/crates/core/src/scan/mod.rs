//! The subgroup auditor: score, search and significance.

mod score;
mod search;
mod significance;

pub use score::{
    cells_from_records, log_likelihood_ratio, score_cells, score_subgroup, solve_q_mle,
    zero_limit_score, Cell, QMle, ScoreEval, Q_BRACKET, Q_RESIDUAL_TOLERANCE,
};
pub use search::{
    bias_scan, optimize_attribute, scan_dataset, AttributeMode, AttributeStep, ScanData,
    ScanResult, ScanSettings, DEFAULT_ITERATIONS, IMPROVEMENT_EPS, MAX_EXHAUSTIVE_ARITY,
};
pub use significance::{p_value, randomization_test, SignificanceResult};
