//! Randomization testing: re-scan datasets whose outcomes are redrawn from
//! the predicted probabilities.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::search::{bias_scan, ScanData, ScanSettings};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::{child_seed, rng_from_seed};
use crate::tabular::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub observed: f64,
    pub p_value: f64,
    pub n_replicas: usize,
    pub replica_scores: Vec<f64>,
}

/// `(1 + #{replica ≥ observed}) / (1 + n)`.
pub fn p_value(observed: f64, replica_scores: &[f64]) -> f64 {
    let exceed = replica_scores.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (1 + replica_scores.len()) as f64
}

pub fn randomization_test(
    d: &Dataset,
    observed: f64,
    n_replicas: usize,
    settings: &ScanSettings,
) -> Result<SignificanceResult> {
    if n_replicas == 0 {
        return Err(Error::invalid("at least one replica is required"));
    }
    let probs: Vec<f64> = d.outcomes()?.into_iter().map(|(_, p)| p).collect();
    if probs.is_empty() {
        return Err(Error::precondition("cannot test an empty dataset"));
    }
    let scores = map_indexed(n_replicas, |r| -> Result<f64> {
        let seed = child_seed(settings.seed, r as u64);
        let mut rng = rng_from_seed(seed);
        let mut replica = d.clone();
        for (rec, &p) in replica.records.iter_mut().zip(&probs) {
            rec.y = rng.gen::<f64>() < p;
        }
        let data = ScanData::from_dataset(&replica)?;
        let run = ScanSettings { seed, ..*settings };
        Ok(bias_scan(&data, &run)?.eval.score)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SignificanceResult {
        observed,
        p_value: p_value(observed, &scores),
        n_replicas,
        replica_scores: scores,
    })
}
