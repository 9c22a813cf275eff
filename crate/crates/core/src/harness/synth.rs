use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tabular::{Attribute, Dataset, ProbSemantics, Record, Schema};

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// One attribute of a factorized generator: marginal weights and additive
/// logit effects per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenAttribute {
    pub name: String,
    pub values: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub logit_effects: Vec<f64>,
}

/// Replaces the factorized conditional of one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverride {
    pub profile: BTreeMap<String, String>,
    pub p: f64,
}

/// Independent attribute marginals with `P(Y=1 | x) = σ(b + Σ_j e_j(x_j))`,
/// optionally overridden per profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub attributes: Vec<GenAttribute>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub overrides: Vec<ProfileOverride>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_outcome")]
    pub outcome_column: String,
    #[serde(default = "default_probability")]
    pub probability_column: String,
}

fn default_outcome() -> String {
    "y".into()
}

fn default_probability() -> String {
    "p".into()
}

fn attr(name: &str, values: &[&str], weights: &[f64], effects: &[f64]) -> GenAttribute {
    GenAttribute {
        name: name.into(),
        values: values.iter().map(|s| s.to_string()).collect(),
        weights: weights.to_vec(),
        logit_effects: effects.to_vec(),
    }
}

impl GeneratorSpec {
    /// Five attributes with arities (2, 4, 2, 2, 3), 96 profiles, shaped
    /// like a pretrial risk dataset.
    pub fn compas_like(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            attributes: vec![
                attr("sex", &["Male", "Female"], &[0.75, 0.25], &[0.0, -0.45]),
                attr(
                    "race",
                    &["African-American", "Caucasian", "Hispanic", "Other"],
                    &[0.3, 0.3, 0.2, 0.2],
                    &[0.25, -0.1, -0.15, -0.2],
                ),
                attr("charge_degree", &["F", "M"], &[0.6, 0.4], &[0.15, -0.15]),
                attr("age_lt_25", &["no", "yes"], &[0.65, 0.35], &[-0.15, 0.35]),
                attr("priors", &["0", "1-3", ">3"], &[0.4, 0.35, 0.25], &[-0.4, 0.05, 0.55]),
            ],
            intercept: -0.2,
            overrides: Vec::new(),
            n,
            seed,
            outcome_column: default_outcome(),
            probability_column: default_probability(),
        }
    }

    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        match name {
            "compas_like" | "compas-like" => Ok(GeneratorSpec::compas_like(n, seed)),
            other => Err(Error::invalid(format!("unknown generator preset '{other}'"))),
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.attributes
                .iter()
                .map(|a| Attribute {
                    name: a.name.clone(),
                    values: a.values.clone(),
                })
                .collect(),
            self.outcome_column.clone(),
            Some(self.probability_column.clone()),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.schema()?;
        for a in &self.attributes {
            if a.weights.len() != a.values.len() {
                return Err(Error::invalid(format!("attribute '{}': one weight per value required", a.name)));
            }
            if !a.logit_effects.is_empty() && a.logit_effects.len() != a.values.len() {
                return Err(Error::invalid(format!(
                    "attribute '{}': one logit effect per value required",
                    a.name
                )));
            }
            if a.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
                return Err(Error::invalid(format!("attribute '{}': negative weight", a.name)));
            }
            let total: f64 = a.weights.iter().sum();
            if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::invalid(format!(
                    "attribute '{}': weights sum to {total}, not 1",
                    a.name
                )));
            }
            if a.logit_effects.iter().any(|e| !e.is_finite()) {
                return Err(Error::invalid(format!("attribute '{}': non-finite effect", a.name)));
            }
        }
        if !self.intercept.is_finite() {
            return Err(Error::invalid("non-finite intercept"));
        }
        self.override_table()?;
        Ok(())
    }

    fn override_table(&self) -> Result<BTreeMap<Vec<u32>, f64>> {
        let schema = self.schema()?;
        let mut out = BTreeMap::new();
        for o in &self.overrides {
            if !(o.p > 0.0 && o.p < 1.0) {
                return Err(Error::invalid(format!("override probability {} outside (0, 1)", o.p)));
            }
            if o.profile.len() != schema.arity() {
                return Err(Error::invalid("override must name every attribute exactly once"));
            }
            let values = schema
                .attributes
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    o.profile
                        .get(&a.name)
                        .and_then(|v| schema.value_index(j, v))
                        .ok_or_else(|| Error::invalid(format!("override has no valid value for '{}'", a.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert(values, o.p);
        }
        Ok(out)
    }

    fn factorized_p(&self, profile: &[u32]) -> f64 {
        let z = self.intercept
            + self
                .attributes
                .iter()
                .zip(profile)
                .map(|(a, &v)| a.logit_effects.get(v as usize).copied().unwrap_or(0.0))
                .sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }

    /// Every profile with its marginal weight and true conditional.
    pub fn profile_universe(&self) -> Result<Vec<(Vec<u32>, f64, f64)>> {
        self.validate()?;
        let overrides = self.override_table()?;
        let mut profiles: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 1.0)];
        for a in &self.attributes {
            profiles = profiles
                .into_iter()
                .flat_map(|(prefix, w)| {
                    a.weights.iter().enumerate().map(move |(v, &wv)| {
                        let mut p = prefix.clone();
                        p.push(v as u32);
                        (p, w * wv)
                    })
                })
                .collect();
        }
        Ok(profiles
            .into_iter()
            .map(|(profile, w)| {
                let p = overrides
                    .get(&profile)
                    .copied()
                    .unwrap_or_else(|| self.factorized_p(&profile));
                (profile, w, p)
            })
            .collect())
    }
}

/// Draws `n` records: attributes independently by weight, then
/// `y ~ Bernoulli(P(Y=1 | x))`. The true conditional is attached as `p`.
pub fn synth_generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let schema = spec.schema()?;
    let overrides = spec.override_table()?;
    let cumulative: Vec<Vec<f64>> = spec
        .attributes
        .iter()
        .map(|a| {
            a.weights
                .iter()
                .scan(0.0, |acc, &w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let mut rng = rng_from_seed(spec.seed);
    let mut records = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let values: Vec<u32> = cumulative
            .iter()
            .map(|cum| {
                let u = rng.gen::<f64>() * cum.last().copied().unwrap_or(1.0);
                cum.partition_point(|&c| c <= u).min(cum.len() - 1) as u32
            })
            .collect();
        let p = overrides
            .get(&values)
            .copied()
            .unwrap_or_else(|| spec.factorized_p(&values));
        let y = rng.gen::<f64>() < p;
        records.push(Record::with_p(values, y, p));
    }
    Dataset::new(schema, records, ProbSemantics::TrueP)
}
