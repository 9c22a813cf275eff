use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{clamp_probability, ValueMap};
use crate::error::{Error, Result};
use crate::tabular::{Dataset, Schema};

/// Smoothed empirical positive rate per covariate profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimator {
    pub schema: Schema,
    pub lambda: f64,
    pub fallback: f64,
    pub rates: BTreeMap<Vec<u32>, ProfileRate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRate {
    pub n: u64,
    pub y: u64,
    pub rate: f64,
}

pub fn fit_profile_estimator(train: &Dataset, lambda: f64) -> Result<ProfileEstimator> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if train.is_empty() {
        return Err(Error::precondition("cannot fit on an empty training set"));
    }
    let mut counts: BTreeMap<Vec<u32>, (u64, u64)> = BTreeMap::new();
    for r in &train.records {
        let e = counts.entry(r.values.clone()).or_default();
        e.0 += 1;
        e.1 += u64::from(r.y);
    }
    let rates = counts
        .into_iter()
        .map(|(k, (n, y))| {
            let rate = clamp_probability((y as f64 + lambda) / (n as f64 + 2.0 * lambda));
            (k, ProfileRate { n, y, rate })
        })
        .collect();
    Ok(ProfileEstimator {
        schema: train.schema.clone(),
        lambda,
        fallback: clamp_probability(train.positives() as f64 / train.len() as f64),
        rates,
    })
}

impl ProfileEstimator {
    pub fn rate(&self, profile: &[u32]) -> f64 {
        self.rates.get(profile).map_or(self.fallback, |r| r.rate)
    }

    pub(crate) fn predict_probs(&self, d: &Dataset) -> Result<Vec<f64>> {
        let map = ValueMap::new(&self.schema, &d.schema)?;
        Ok(d.records
            .iter()
            .map(|r| match map.translate(&r.values) {
                Some(profile) => self.rate(&profile),
                None => self.fallback,
            })
            .collect())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let rates: Vec<_> = self
            .rates
            .iter()
            .map(|(k, r)| {
                serde_json::json!({
                    "profile": self.schema.describe_profile(k),
                    "n": r.n,
                    "y": r.y,
                    "rate": r.rate,
                })
            })
            .collect();
        serde_json::json!({
            "kind": "profile",
            "lambda": self.lambda,
            "fallback": self.fallback,
            "rates": rates,
        })
    }
}
