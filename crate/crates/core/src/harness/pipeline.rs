use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{overlap, ExperimentConfig};
use crate::classifiers::{predict, Model};
use crate::error::{Error, Result};
use crate::inject::{inject_bias, BiasSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scan::{scan_dataset, score_subgroup};
use crate::tabular::{member_indices, Dataset, ProbSemantics, Subgroup};
use crate::theory::{critical_value, delta_threshold_for, theoretical_score};

const SPLIT_STREAM: u64 = 1;
const INJECT_STREAM: u64 = 2;
const SCAN_STREAM: u64 = 3;

/// Seeds of one trial. The split seed depends only on the trial index, so
/// every Δ of a sweep sees the same test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub split: u64,
    pub inject: u64,
    pub scan: u64,
}

impl TrialSeeds {
    pub fn derive(master: u64, delta_index: usize, trial: usize) -> Self {
        let (d, t) = (delta_index as u64, trial as u64);
        TrialSeeds {
            split: derive_seed(master, &[SPLIT_STREAM, t]),
            inject: derive_seed(master, &[INJECT_STREAM, d, t]),
            scan: derive_seed(master, &[SCAN_STREAM, d, t]),
        }
    }
}

/// Random train/test partition; both parts keep the original record order.
pub fn split_dataset(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    super::check_fraction(train_fraction)?;
    let n_train = (d.len() as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == d.len() {
        return Err(Error::precondition(format!(
            "a {train_fraction} split of {} records leaves one side empty",
            d.len()
        )));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (train, test) = idx.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.select(train), d.select(test)))
}

/// Everything one trial produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub delta: f64,
    pub trial: usize,
    pub f_star: f64,
    pub q_hat_star: f64,
    /// `F(S^T)` on the biased model's test predictions.
    pub f_target: f64,
    pub f_theo: f64,
    pub f_old: f64,
    pub theory_applicable: bool,
    pub relative_error: Option<f64>,
    pub overlap: f64,
    pub detected: bool,
    pub h_alpha: f64,
    pub m: usize,
    pub delta_thresh: f64,
    pub n_test: usize,
    pub n_target_test: usize,
    pub detected_subgroup: BTreeMap<String, Vec<String>>,
}

/// The Δ-independent half of a trial.
pub(crate) struct TrialBase {
    train: Dataset,
    test: Dataset,
    target_idx: Vec<usize>,
    /// `(y, p)` of the test target slice under the unbiased conditional.
    target_unbiased: Vec<(bool, f64)>,
    m: usize,
    h_alpha: f64,
    delta_thresh: f64,
}

pub(crate) fn prepare_trial(
    config: &ExperimentConfig,
    data: &Dataset,
    target: &Subgroup,
    seeds: TrialSeeds,
) -> Result<TrialBase> {
    let (train, test) = split_dataset(data, config.train_fraction, seeds.split)?;
    let target_idx = member_indices(&test, target)?;
    if target_idx.is_empty() {
        return Err(Error::precondition("target subgroup has no test records"));
    }
    let unbiased = if data.prob_semantics == ProbSemantics::TrueP && test.has_probabilities() {
        test.select(&target_idx)
    } else {
        let model = Model::fit(&config.classifier, &train)?;
        predict(&model, &test.select(&target_idx), ProbSemantics::UnbiasedPred)?
    };
    let target_unbiased = unbiased.outcomes()?;
    let m = test.distinct_profiles();
    let spec = critical_value(m, config.alpha)?;
    let delta_thresh = delta_threshold_for(&target_unbiased, spec.h_alpha)?.delta_thresh;
    Ok(TrialBase {
        train,
        test,
        target_idx,
        target_unbiased,
        m,
        h_alpha: spec.h_alpha,
        delta_thresh,
    })
}

pub(crate) fn finish_trial(
    config: &ExperimentConfig,
    base: &TrialBase,
    target: &Subgroup,
    delta: f64,
    trial: usize,
    seeds: TrialSeeds,
) -> Result<TrialRecord> {
    let biased_train = inject_bias(&base.train, &BiasSpec::new(target.clone(), delta, seeds.inject))?;
    let model = Model::fit(&config.classifier, &biased_train)?;
    let provenance = if delta > 1.0 {
        ProbSemantics::BiasedPred
    } else {
        ProbSemantics::UnbiasedPred
    };
    let scored = predict(&model, &base.test, provenance)?;
    let result = scan_dataset(&scored, &config.scan.with_seed(seeds.scan))?;
    let target_outcomes = scored.select(&base.target_idx).outcomes()?;
    let f_target = score_subgroup(&target_outcomes).score;
    let theory = theoretical_score(&base.target_unbiased, delta)?;
    let detected_idx = if result.subgroup.is_empty() {
        Vec::new()
    } else {
        member_indices(&scored, &result.subgroup)?
    };
    Ok(TrialRecord {
        delta,
        trial,
        f_star: result.eval.score,
        q_hat_star: result.eval.q_hat,
        f_target,
        f_theo: theory.f_theo,
        f_old: theory.f_old,
        theory_applicable: theory.applicable,
        relative_error: (theory.f_theo > 0.0)
            .then(|| (f_target - theory.f_theo).abs() / theory.f_theo),
        overlap: overlap(&base.target_idx, &detected_idx),
        detected: result.eval.score > base.h_alpha,
        h_alpha: base.h_alpha,
        m: base.m,
        delta_thresh: base.delta_thresh,
        n_test: base.test.len(),
        n_target_test: base.target_idx.len(),
        detected_subgroup: result.subgroup.to_named(&scored.schema).into_iter().collect(),
    })
}

/// One pass of split → inject → train → predict → scan for a single `Δ`.
pub fn run_pipeline(
    config: &ExperimentConfig,
    data: &Dataset,
    delta: f64,
    trial: usize,
    seeds: TrialSeeds,
) -> Result<TrialRecord> {
    config.validate()?;
    if !(delta >= 1.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be >= 1, got {delta}")));
    }
    let target = Subgroup::from_named(&data.schema, &config.target)?;
    let base = prepare_trial(config, data, &target, seeds)?;
    finish_trial(config, &base, &target, delta, trial, seeds)
}
