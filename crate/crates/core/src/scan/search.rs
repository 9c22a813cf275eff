//! Multi-restart coordinate ascent over rectangular subgroups.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::score::{score_cells, solve_q_mle, Cell, QMle, ScoreEval};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{child_seed, rng_from_seed, Rng};
use crate::tabular::{Dataset, Schema, Subgroup};

/// Minimum gain for a coordinate step to be accepted.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

/// Largest arity the exhaustive attribute optimizer will enumerate.
pub const MAX_EXHAUSTIVE_ARITY: usize = 20;

pub const DEFAULT_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttributeMode {
    /// Priority-ordered prefixes, linear in the arity.
    #[default]
    Ltss,
    /// Every non-empty value subset.
    Exhaustive,
}

impl FromStr for AttributeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ltss" => Ok(AttributeMode::Ltss),
            "exhaustive" => Ok(AttributeMode::Exhaustive),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSettings {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: AttributeMode,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            mode: AttributeMode::Ltss,
        }
    }
}

#[derive(Debug, Clone)]
struct ScanCell {
    values: Vec<u32>,
    tally: Cell,
}

/// Records grouped by (profile, probability). Scores are additive over
/// records, so scanning the cells is exact.
#[derive(Debug, Clone)]
pub struct ScanData {
    arities: Vec<usize>,
    cells: Vec<ScanCell>,
    n_records: usize,
}

impl ScanData {
    pub fn from_dataset(d: &Dataset) -> Result<Self> {
        let mut index: HashMap<(&[u32], u64), usize> = HashMap::new();
        let mut cells: Vec<ScanCell> = Vec::new();
        for (i, r) in d.records.iter().enumerate() {
            let p = r
                .p
                .ok_or_else(|| Error::precondition(format!("record {i} has no probability")))?;
            let k = *index.entry((r.values.as_slice(), p.to_bits())).or_insert_with(|| {
                cells.push(ScanCell {
                    values: r.values.clone(),
                    tally: Cell::new(0.0, 0.0, p),
                });
                cells.len() - 1
            });
            cells[k].tally.count += 1.0;
            if r.y {
                cells[k].tally.positives += 1.0;
            }
        }
        Ok(ScanData {
            arities: d.schema.arities(),
            cells,
            n_records: d.len(),
        })
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn score(&self, s: &Subgroup) -> ScoreEval {
        if s.is_empty() {
            return ScoreEval::zero(0, 0);
        }
        let masks = s.masks(&self.arities);
        let selected: Vec<Cell> = self
            .cells
            .iter()
            .filter(|c| c.values.iter().zip(&masks).all(|(&v, m)| m[v as usize]))
            .map(|c| c.tally)
            .collect();
        score_cells(&selected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeStep {
    pub values: Vec<u32>,
    pub eval: ScoreEval,
}

/// `true` when `(score, set)` beats the incumbent under the tie-break rule:
/// higher score by more than [`IMPROVEMENT_EPS`], or a tie with a
/// lexicographically smaller set.
fn beats(score: f64, set: &[u32], best_score: f64, best_set: &[u32]) -> bool {
    if score > best_score + IMPROVEMENT_EPS {
        return true;
    }
    (score - best_score).abs() <= IMPROVEMENT_EPS && set.cmp(best_set) == Ordering::Less
}

/// Best non-empty `S_j ⊆ V_j` with the other attributes fixed from `s`.
pub fn optimize_attribute(
    data: &ScanData,
    s: &Subgroup,
    attribute: usize,
    mode: AttributeMode,
) -> Result<AttributeStep> {
    let arity = *data
        .arities
        .get(attribute)
        .ok_or_else(|| Error::invalid(format!("attribute index {attribute} out of range")))?;
    if s.arity() != data.arities.len() {
        return Err(Error::schema("subgroup does not match scan data"));
    }
    let masks = s.masks(&data.arities);
    let mut slices: Vec<Vec<Cell>> = vec![Vec::new(); arity];
    for c in &data.cells {
        let others_match = c
            .values
            .iter()
            .zip(&masks)
            .enumerate()
            .all(|(k, (&v, m))| k == attribute || m[v as usize]);
        if others_match {
            slices[c.values[attribute] as usize].push(c.tally);
        }
    }
    match mode {
        AttributeMode::Exhaustive => exhaustive_step(&slices),
        AttributeMode::Ltss => Ok(ltss_step(&slices)),
    }
}

fn exhaustive_step(slices: &[Vec<Cell>]) -> Result<AttributeStep> {
    let arity = slices.len();
    if arity > MAX_EXHAUSTIVE_ARITY {
        return Err(Error::invalid(format!(
            "exhaustive mode supports arity up to {MAX_EXHAUSTIVE_ARITY}, got {arity}"
        )));
    }
    let mut best: Option<AttributeStep> = None;
    let mut buf = Vec::new();
    for mask in 1u32..(1u32 << arity) {
        let set: Vec<u32> = (0..arity as u32).filter(|v| mask & (1 << v) != 0).collect();
        buf.clear();
        for &v in &set {
            buf.extend_from_slice(&slices[v as usize]);
        }
        let eval = score_cells(&buf);
        let better = match &best {
            None => true,
            Some(b) => beats(eval.score, &set, b.eval.score, &b.values),
        };
        if better {
            best = Some(AttributeStep { values: set, eval });
        }
    }
    Ok(best.expect("arity >= 1"))
}

/// Contribution of a slice to the log-likelihood ratio at `q = e^t`.
fn contribution(cells: &[Cell], t: f64) -> f64 {
    let growth = t.exp_m1();
    cells
        .iter()
        .map(|c| c.positives * t - c.count * (c.p * growth).ln_1p())
        .sum()
}

/// The `q < 1` at which a slice's contribution changes sign. For fixed
/// `q`, the slice helps the score exactly when `q` exceeds this value, so
/// sorting by it makes the prefix chain contain the optimal subset.
/// Slices that never help get 1, empty slices `+∞`.
fn break_even(cells: &[Cell]) -> f64 {
    if cells.is_empty() {
        return f64::INFINITY;
    }
    let positives: f64 = cells.iter().map(|c| c.positives).sum();
    if positives <= 0.0 {
        return 0.0;
    }
    let q_hat = match solve_q_mle(cells) {
        Ok(QMle::Finite(q)) if q < 1.0 => q,
        _ => return 1.0,
    };
    let mut hi = q_hat.ln();
    let mut step = 1.0;
    let mut lo = hi - step;
    while contribution(cells, lo) > 0.0 {
        hi = lo;
        step *= 2.0;
        lo -= step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if contribution(cells, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Sorts values by break-even odds multiplier ascending and keeps the best
/// prefix.
fn ltss_step(slices: &[Vec<Cell>]) -> AttributeStep {
    let mut order: Vec<(f64, u32)> = slices
        .iter()
        .enumerate()
        .map(|(v, cells)| (break_even(cells), v as u32))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<AttributeStep> = None;
    let mut buf = Vec::new();
    for k in 0..order.len() {
        buf.extend_from_slice(&slices[order[k].1 as usize]);
        let eval = score_cells(&buf);
        if best
            .as_ref()
            .is_none_or(|b| eval.score > b.eval.score + IMPROVEMENT_EPS)
        {
            let mut set: Vec<u32> = order[..=k].iter().map(|o| o.1).collect();
            set.sort_unstable();
            best = Some(AttributeStep { values: set, eval });
        }
    }
    best.expect("arity >= 1")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub subgroup: Subgroup,
    pub eval: ScoreEval,
    pub restarts_run: usize,
    pub restart_best_scores: Vec<f64>,
    pub seed: u64,
    pub mode: AttributeMode,
}

impl ScanResult {
    pub fn to_json_value(&self, schema: &Schema) -> serde_json::Value {
        serde_json::json!({
            "subgroup": self.subgroup.to_json_value(schema),
            "score": self.eval.score,
            "q_hat": self.eval.q_hat,
            "boundary": self.eval.boundary,
            "n_records": self.eval.n_records,
            "n_positives": self.eval.n_positives,
            "restarts_run": self.restarts_run,
            "restart_best_scores": self.restart_best_scores,
            "seed": self.seed,
            "mode": self.mode,
        })
    }
}

struct RestartOutcome {
    best_score: f64,
    best: Option<Subgroup>,
}

fn random_nonempty_subset(rng: &mut Rng, arity: usize) -> Vec<u32> {
    loop {
        let set: Vec<u32> = (0..arity as u32).filter(|_| rng.gen_bool(0.5)).collect();
        if !set.is_empty() {
            return set;
        }
    }
}

fn run_restart(data: &ScanData, seed: u64, mode: AttributeMode) -> Result<RestartOutcome> {
    let mut rng = rng_from_seed(seed);
    let q = data.arities.len();
    let mut s = Subgroup::from_sets(
        data.arities
            .iter()
            .map(|&a| random_nonempty_subset(&mut rng, a))
            .collect(),
    );
    let mut current = data.score(&s).score;
    let mut best_score = current;
    let mut best = Some(s.clone());
    let mut unvisited: Vec<usize> = (0..q).collect();
    while !unvisited.is_empty() {
        let pick = rng.gen_range(0..unvisited.len());
        let j = unvisited.swap_remove(pick);
        let step = optimize_attribute(data, &s, j, mode)?;
        if step.eval.score > current + IMPROVEMENT_EPS {
            s = s.replace(j, step.values);
            current = step.eval.score;
            unvisited = (0..q).filter(|&k| k != j).collect();
        }
        if current > best_score {
            best_score = current;
            best = Some(s.clone());
        }
    }
    Ok(RestartOutcome { best_score, best })
}

/// Coordinate-ascent subgroup search with `iterations` random restarts.
///
/// Restart `r` draws from its own generator seeded with
/// `seed ⊕ splitmix(r)`, so the result is the same however restarts are
/// scheduled.
pub fn bias_scan(data: &ScanData, settings: &ScanSettings) -> Result<ScanResult> {
    if settings.iterations == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    if data.n_records == 0 {
        return Err(Error::precondition("cannot scan an empty dataset"));
    }
    let outcomes: Vec<RestartOutcome> = map_indexed(settings.iterations, |r| {
        run_restart(data, child_seed(settings.seed, r as u64), settings.mode)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut best_score = 0.0;
    let mut best_subgroup = Subgroup::from_sets(vec![Vec::new(); data.arities.len()]);
    for o in &outcomes {
        if o.best_score > best_score {
            best_score = o.best_score;
            best_subgroup = o.best.clone().expect("restart produced a subgroup");
        }
    }
    Ok(ScanResult {
        eval: data.score(&best_subgroup),
        subgroup: best_subgroup,
        restarts_run: settings.iterations,
        restart_best_scores: outcomes.iter().map(|o| o.best_score).collect(),
        seed: settings.seed,
        mode: settings.mode,
    })
}

/// [`bias_scan`] straight from a dataset carrying predictions.
pub fn scan_dataset(d: &Dataset, settings: &ScanSettings) -> Result<ScanResult> {
    if d.is_empty() {
        return Err(Error::precondition("cannot scan an empty dataset"));
    }
    bias_scan(&ScanData::from_dataset(d)?, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Attribute, ProbSemantics, Record};

    fn schema(arities: &[usize]) -> Schema {
        Schema::new(
            arities
                .iter()
                .enumerate()
                .map(|(j, &a)| Attribute {
                    name: format!("x{j}"),
                    values: (0..a).map(|v| format!("v{v}")).collect(),
                })
                .collect(),
            "y",
            Some("p".into()),
        )
        .unwrap()
    }

    fn two_by_two() -> Dataset {
        // Cell (a1, b1) has y = (0, 0); every other cell y = (1, 1); p = 0.7.
        let mut records = Vec::new();
        for a in 0..2u32 {
            for b in 0..2u32 {
                let y = !(a == 0 && b == 0);
                records.push(Record::with_p(vec![a, b], y, 0.7));
                records.push(Record::with_p(vec![a, b], y, 0.7));
            }
        }
        Dataset::new(schema(&[2, 2]), records, ProbSemantics::BiasedPred).unwrap()
    }

    #[test]
    fn finds_planted_cell() {
        let d = two_by_two();
        for mode in [AttributeMode::Ltss, AttributeMode::Exhaustive] {
            let r = scan_dataset(
                &d,
                &ScanSettings {
                    iterations: 10,
                    seed: 3,
                    mode,
                },
            )
            .unwrap();
            assert_eq!(r.subgroup, Subgroup::from_sets(vec![vec![0], vec![0]]));
            // Oracle: -2 log 0.3.
            assert!((r.eval.score - 2.407_945_608_651_872).abs() < 1e-9);
            let max = r.restart_best_scores.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, r.eval.score);
        }
        let data = ScanData::from_dataset(&d).unwrap();
        let wider = data.score(&Subgroup::from_sets(vec![vec![0], vec![0, 1]]));
        assert!((wider.score - 0.348_706_774_289_555).abs() < 1e-9);
    }

    #[test]
    fn all_positive_scores_zero() {
        let records = (0..6)
            .map(|i| Record::with_p(vec![i % 2, i % 3], true, 0.5))
            .collect();
        let d = Dataset::new(schema(&[2, 3]), records, ProbSemantics::BiasedPred).unwrap();
        let r = scan_dataset(&d, &ScanSettings::default()).unwrap();
        assert_eq!(r.eval.score, 0.0);
        assert!(r.subgroup.is_empty());
    }

    #[test]
    fn rejects_empty_and_zero_iterations() {
        let d = Dataset::new(schema(&[2]), vec![], ProbSemantics::BiasedPred).unwrap();
        assert!(scan_dataset(&d, &ScanSettings::default()).is_err());
        let d = two_by_two();
        let bad = ScanSettings {
            iterations: 0,
            ..Default::default()
        };
        assert!(scan_dataset(&d, &bad).is_err());
    }

    #[test]
    fn missing_probabilities_rejected() {
        let d = Dataset::new(
            schema(&[2]),
            vec![Record::new(vec![0], true)],
            ProbSemantics::None,
        )
        .unwrap();
        assert!(scan_dataset(&d, &ScanSettings::default()).is_err());
    }

    #[test]
    fn singleton_attribute() {
        let records = vec![
            Record::with_p(vec![0, 0], false, 0.6),
            Record::with_p(vec![0, 1], true, 0.6),
        ];
        let d = Dataset::new(schema(&[1, 2]), records, ProbSemantics::BiasedPred).unwrap();
        let data = ScanData::from_dataset(&d).unwrap();
        let s = Subgroup::full(&d.schema);
        for mode in [AttributeMode::Ltss, AttributeMode::Exhaustive] {
            let step = optimize_attribute(&data, &s, 0, mode).unwrap();
            assert_eq!(step.values, vec![0]);
        }
        assert!(optimize_attribute(&data, &s, 2, AttributeMode::Ltss).is_err());
    }

    #[test]
    fn negative_only_value_sorts_first() {
        // Value 2 has only negatives, so it heads the LTSS order and the
        // singleton prefix {2} is optimal.
        let records = vec![
            Record::with_p(vec![0], true, 0.5),
            Record::with_p(vec![1], true, 0.5),
            Record::with_p(vec![2], false, 0.5),
            Record::with_p(vec![2], false, 0.5),
        ];
        let d = Dataset::new(schema(&[3]), records, ProbSemantics::BiasedPred).unwrap();
        let data = ScanData::from_dataset(&d).unwrap();
        let step =
            optimize_attribute(&data, &Subgroup::full(&d.schema), 0, AttributeMode::Ltss).unwrap();
        assert_eq!(step.values, vec![2]);
    }

    #[test]
    fn deterministic_for_seed() {
        let d = two_by_two();
        let s = ScanSettings {
            iterations: 7,
            seed: 99,
            mode: AttributeMode::Ltss,
        };
        assert_eq!(scan_dataset(&d, &s).unwrap(), scan_dataset(&d, &s).unwrap());
    }
}
