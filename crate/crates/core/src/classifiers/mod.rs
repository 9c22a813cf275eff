//! Predictors for the modeling stage.
//!
//! [`ProfileEstimator`] is a consistent estimator of `P(Y=1 | x)`: it
//! memorizes smoothed per-profile frequencies. [`LogisticModel`] is a
//! one-hot logistic regression, misspecified unless the right interaction
//! terms are added.

mod logistic;
mod profile;

pub use logistic::{
    fit_logistic, fit_logistic_traced, resolve_interactions, LogisticModel, LogisticParams,
    TrainingSummary, DIVERGENCE_PATIENCE,
};
pub use profile::{fit_profile_estimator, ProfileEstimator, ProfileRate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, ProbSemantics, Schema};

/// Predictions are kept inside `[ε, 1 − ε]`.
pub const CLAMP_EPS: f64 = 1e-6;

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// Maps value indices of a prediction-time schema onto the training
/// vocabulary. Attributes are matched by name.
pub(crate) struct ValueMap {
    /// `[train attribute][test value] -> train value`.
    per_attribute: Vec<Vec<Option<u32>>>,
    /// Test attribute index for each train attribute.
    columns: Vec<usize>,
    identity: bool,
}

impl ValueMap {
    pub(crate) fn new(train: &Schema, test: &Schema) -> Result<Self> {
        let mut columns = Vec::with_capacity(train.arity());
        let mut per_attribute = Vec::with_capacity(train.arity());
        for (j, a) in train.attributes.iter().enumerate() {
            let tj = test.attribute_index(&a.name).ok_or_else(|| {
                Error::schema(format!("prediction data lacks attribute '{}'", a.name))
            })?;
            columns.push(tj);
            per_attribute.push(
                test.attributes[tj]
                    .values
                    .iter()
                    .map(|v| train.value_index(j, v))
                    .collect(),
            );
        }
        let identity = train.attributes == test.attributes;
        Ok(ValueMap {
            per_attribute,
            columns,
            identity,
        })
    }

    pub(crate) fn translate_partial(&self, values: &[u32]) -> Vec<Option<u32>> {
        if self.identity {
            return values.iter().map(|&v| Some(v)).collect();
        }
        self.columns
            .iter()
            .zip(&self.per_attribute)
            .map(|(&c, m)| m[values[c] as usize])
            .collect()
    }

    pub(crate) fn translate(&self, values: &[u32]) -> Option<Vec<u32>> {
        if self.identity {
            return Some(values.to_vec());
        }
        self.translate_partial(values).into_iter().collect()
    }
}

/// Which learner to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    Profile {
        #[serde(default)]
        lambda: f64,
    },
    Logistic {
        /// Attribute-name pairs.
        #[serde(default)]
        interactions: Vec<(String, String)>,
        #[serde(default)]
        params: LogisticParams,
    },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Profile { lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Profile(ProfileEstimator),
    Logistic(LogisticModel),
}

impl Model {
    pub fn fit(config: &ClassifierConfig, train: &Dataset) -> Result<Model> {
        match config {
            ClassifierConfig::Profile { lambda } => {
                fit_profile_estimator(train, *lambda).map(Model::Profile)
            }
            ClassifierConfig::Logistic {
                interactions,
                params,
            } => {
                let pairs = resolve_interactions(&train.schema, interactions)?;
                fit_logistic(train, &pairs, params).map(Model::Logistic)
            }
        }
    }

    pub fn predict_probs(&self, d: &Dataset) -> Result<Vec<f64>> {
        match self {
            Model::Profile(m) => m.predict_probs(d),
            Model::Logistic(m) => m.predict_probs(d),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        match self {
            Model::Profile(m) => m.to_json_value(),
            Model::Logistic(m) => m.to_json_value(),
        }
    }
}

/// Attaches the model's predictions to `d`. `provenance` records whether the
/// model saw biased or unbiased training data.
pub fn predict(model: &Model, d: &Dataset, provenance: ProbSemantics) -> Result<Dataset> {
    if !matches!(provenance, ProbSemantics::UnbiasedPred | ProbSemantics::BiasedPred) {
        return Err(Error::invalid("prediction provenance must be unbiased_pred or biased_pred"));
    }
    let probs = model.predict_probs(d)?;
    d.with_probabilities(&probs, provenance)
}
