//! Differential sampling bias: the odds of `Y = 1` inside a target subgroup
//! are multiplied by `Δ`.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tabular::{is_open_unit, Dataset, Schema, Subgroup};

/// `p̃ = Δp / (Δp + 1 − p)`.
pub fn biased_conditional(p: f64, delta: f64) -> Result<f64> {
    if !is_open_unit(p) {
        return Err(Error::invalid(format!("probability {p} outside (0, 1)")));
    }
    check_delta(delta)?;
    Ok(delta * p / (delta * p + 1.0 - p))
}

/// Odds ratio `p_b (1 − p_0) / ((1 − p_b) p_0)`.
pub fn estimate_delta(p_biased: f64, p_base: f64) -> Result<f64> {
    if !is_open_unit(p_biased) || !is_open_unit(p_base) {
        return Err(Error::invalid(format!(
            "proportions must lie in (0, 1), got {p_biased} and {p_base}"
        )));
    }
    Ok(p_biased * (1.0 - p_base) / ((1.0 - p_biased) * p_base))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta >= 1.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be a finite value >= 1, got {delta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSpec {
    pub target: Subgroup,
    pub delta: f64,
    pub seed: u64,
    /// Per-profile overrides of `delta` for heterogeneous bias.
    pub profile_deltas: BTreeMap<Vec<u32>, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BiasSpecJson {
    target: Value,
    delta: f64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    profile_deltas: Vec<ProfileDeltaJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDeltaJson {
    profile: BTreeMap<String, String>,
    delta: f64,
}

impl BiasSpec {
    pub fn new(target: Subgroup, delta: f64, seed: u64) -> Self {
        BiasSpec {
            target,
            delta,
            seed,
            profile_deltas: BTreeMap::new(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        self.target.conforms(schema)?;
        check_delta(self.delta)?;
        for d in self.profile_deltas.values() {
            check_delta(*d)?;
        }
        Ok(())
    }

    pub fn delta_for(&self, profile: &[u32]) -> f64 {
        self.profile_deltas.get(profile).copied().unwrap_or(self.delta)
    }

    pub fn from_json(schema: &Schema, text: &str) -> Result<Self> {
        let raw: BiasSpecJson = serde_json::from_str(text)?;
        let target = Subgroup::from_json_value(schema, &raw.target)?;
        let mut profile_deltas = BTreeMap::new();
        for pd in raw.profile_deltas {
            let mut values = Vec::with_capacity(schema.arity());
            for (j, a) in schema.attributes.iter().enumerate() {
                let v = pd
                    .profile
                    .get(&a.name)
                    .ok_or_else(|| Error::schema(format!("profile delta misses attribute '{}'", a.name)))?;
                values.push(schema.value_index(j, v).ok_or_else(|| {
                    Error::schema(format!("attribute '{}' has no value '{v}'", a.name))
                })?);
            }
            if pd.profile.len() != schema.arity() {
                return Err(Error::schema("profile delta names unknown attributes"));
            }
            profile_deltas.insert(values, pd.delta);
        }
        let spec = BiasSpec {
            target,
            delta: raw.delta,
            seed: raw.seed,
            profile_deltas,
        };
        spec.validate(schema)?;
        Ok(spec)
    }

    pub fn to_json(&self, schema: &Schema) -> Result<String> {
        let raw = BiasSpecJson {
            target: self.target.to_json_value(schema),
            delta: self.delta,
            seed: self.seed,
            profile_deltas: self
                .profile_deltas
                .iter()
                .map(|(values, &delta)| ProfileDeltaJson {
                    profile: schema.describe_profile(values),
                    delta,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }
}

/// Replaces the in-target records by as many weighted draws with
/// replacement (weight `Δ` for `y = 1`, 1 for `y = 0`). Records outside
/// the target keep their positions and contents.
pub fn inject_bias(train: &Dataset, spec: &BiasSpec) -> Result<Dataset> {
    spec.validate(&train.schema)?;
    let slots: Vec<usize> = train
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| spec.target.contains(&r.values))
        .map(|(i, _)| i)
        .collect();
    if slots.is_empty() {
        return Err(Error::precondition(
            "target subgroup has no records in the training data",
        ));
    }
    let cumulative: Vec<f64> = slots
        .iter()
        .scan(0.0, |acc, &i| {
            let r = &train.records[i];
            *acc += if r.y { spec.delta_for(&r.values) } else { 1.0 };
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("non-empty");
    let mut rng = rng_from_seed(spec.seed);
    let mut out = train.clone();
    for &slot in &slots {
        let u = rng.gen::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= u).min(slots.len() - 1);
        out.records[slot] = train.records[slots[k]].clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Attribute, ProbSemantics, Record};

    fn schema() -> Schema {
        Schema::new(
            vec![
                Attribute {
                    name: "g".into(),
                    values: vec!["a".into(), "b".into()],
                },
                Attribute {
                    name: "h".into(),
                    values: vec!["x".into(), "y".into()],
                },
            ],
            "y",
            None,
        )
        .unwrap()
    }

    fn slice(n: usize, rate_num: usize, rate_den: usize) -> Dataset {
        let records = (0..n)
            .map(|i| Record::new(vec![(i % 2) as u32, 0], (i / 2) % rate_den < rate_num))
            .collect();
        Dataset::new(schema(), records, ProbSemantics::None).unwrap()
    }

    #[test]
    fn conditional_examples() {
        assert!((biased_conditional(0.5, 3.0).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(biased_conditional(0.3, 1.0).unwrap(), 0.3);
        let mut prev = 0.5;
        for d in [2.0, 10.0, 1e3, 1e6] {
            let v = biased_conditional(0.5, d).unwrap();
            assert!(v > prev && v < 1.0);
            prev = v;
        }
        assert!(biased_conditional(0.0, 2.0).is_err());
        assert!(biased_conditional(0.5, 0.9).is_err());
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_delta(0.4, 0.4).unwrap(), 1.0);
        assert!((estimate_delta(0.75, 0.5).unwrap() - 3.0).abs() < 1e-12);
        let p0 = 0.31;
        let pk = biased_conditional(p0, 2.675).unwrap();
        assert!((estimate_delta(pk, p0).unwrap() - 2.675).abs() < 1e-12);
        assert!(estimate_delta(1.0, 0.5).is_err());
    }

    #[test]
    fn injection_keeps_outside_records() {
        let d = slice(200, 1, 2);
        let target = Subgroup::from_sets(vec![vec![0], vec![0, 1]]);
        let out = inject_bias(&d, &BiasSpec::new(target.clone(), 4.0, 9)).unwrap();
        assert_eq!(out.len(), d.len());
        for (a, b) in d.records.iter().zip(&out.records) {
            if !target.contains(&a.values) {
                assert_eq!(a, b);
            } else {
                assert!(target.contains(&b.values));
            }
        }
        assert_eq!(out, inject_bias(&d, &BiasSpec::new(target, 4.0, 9)).unwrap());
    }

    #[test]
    fn injection_hits_biased_rate() {
        let d = slice(20_000, 1, 2);
        let target = Subgroup::from_sets(vec![vec![0], vec![0]]);
        let out = inject_bias(&d, &BiasSpec::new(target.clone(), 3.0, 1)).unwrap();
        let inside: Vec<_> = out.records.iter().filter(|r| target.contains(&r.values)).collect();
        let n = inside.len() as f64;
        let rate = inside.iter().filter(|r| r.y).count() as f64 / n;
        let sigma = (0.75 * 0.25 / n).sqrt();
        assert!((rate - 0.75).abs() < 3.0 * sigma, "{rate}");
    }

    #[test]
    fn all_positive_slice_stays_positive() {
        let d = slice(50, 1, 1);
        let target = Subgroup::full(&d.schema);
        let out = inject_bias(&d, &BiasSpec::new(target, 7.0, 3)).unwrap();
        assert!(out.records.iter().all(|r| r.y));
    }

    #[test]
    fn empty_target_is_rejected() {
        let d = slice(10, 1, 2);
        let target = Subgroup::from_sets(vec![vec![0, 1], vec![1]]);
        assert!(inject_bias(&d, &BiasSpec::new(target, 2.0, 0)).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = schema();
        let text = r#"{"target": {"g": ["b"]}, "delta": 2.5, "seed": 11,
            "profile_deltas": [{"profile": {"g": "b", "h": "y"}, "delta": 4.0}]}"#;
        let spec = BiasSpec::from_json(&s, text).unwrap();
        assert_eq!(spec.target, Subgroup::from_sets(vec![vec![1], vec![0, 1]]));
        assert_eq!(spec.delta_for(&[1, 1]), 4.0);
        assert_eq!(spec.delta_for(&[1, 0]), 2.5);
        let again = BiasSpec::from_json(&s, &spec.to_json(&s).unwrap()).unwrap();
        assert_eq!(spec, again);
        assert!(BiasSpec::from_json(&s, r#"{"target": {}, "delta": 0.5, "seed": 1}"#).is_err());
    }
}
