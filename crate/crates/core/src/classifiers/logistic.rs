use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{clamp_probability, ValueMap};
use crate::error::{Error, Result};
use crate::tabular::{Dataset, Schema};

/// Loss increases tolerated in a row before training is declared diverged.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    /// `None` picks `1 / L` with `L` the gradient Lipschitz bound.
    pub learning_rate: Option<f64>,
    pub max_iterations: usize,
    /// Applied to every weight except the intercept.
    pub l2: f64,
    pub gradient_tolerance: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            learning_rate: None,
            max_iterations: 20_000,
            l2: 1e-6,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Sparse feature layout: one indicator per attribute value, then one per
/// value pair of every interaction.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    arities: Vec<usize>,
    offsets: Vec<usize>,
    interactions: Vec<(usize, usize)>,
    interaction_offsets: Vec<usize>,
    width: usize,
}

impl Layout {
    fn new(schema: &Schema, interactions: &[(usize, usize)]) -> Self {
        let arities = schema.arities();
        let mut offsets = Vec::with_capacity(arities.len());
        let mut width = 0;
        for &a in &arities {
            offsets.push(width);
            width += a;
        }
        let mut interaction_offsets = Vec::with_capacity(interactions.len());
        for &(a, b) in interactions {
            interaction_offsets.push(width);
            width += arities[a] * arities[b];
        }
        Layout {
            arities,
            offsets,
            interactions: interactions.to_vec(),
            interaction_offsets,
            width,
        }
    }

    /// Active feature indices; `None` entries (unknown values) switch off
    /// every feature they take part in.
    fn active(&self, profile: &[Option<u32>]) -> Vec<usize> {
        let mut out: Vec<usize> = profile
            .iter()
            .zip(&self.offsets)
            .filter_map(|(v, &o)| v.map(|v| o + v as usize))
            .collect();
        for (&(a, b), &o) in self.interactions.iter().zip(&self.interaction_offsets) {
            if let (Some(va), Some(vb)) = (profile[a], profile[b]) {
                out.push(o + va as usize * self.arities[b] + vb as usize);
            }
        }
        out
    }

    fn names(&self, schema: &Schema) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width);
        for a in &schema.attributes {
            names.extend(a.values.iter().map(|v| format!("{}={}", a.name, v)));
        }
        for &(a, b) in &self.interactions {
            let (aa, ab) = (&schema.attributes[a], &schema.attributes[b]);
            for va in &aa.values {
                for vb in &ab.values {
                    names.push(format!("{}={}&{}={}", aa.name, va, ab.name, vb));
                }
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub final_loss: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub schema: Schema,
    pub interactions: Vec<(usize, usize)>,
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub params: LogisticParams,
    pub summary: TrainingSummary,
    layout: Layout,
}

/// Per-profile training row.
struct Row {
    active: Vec<usize>,
    n: f64,
    y: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem {
    rows: Vec<Row>,
    total: f64,
    width: usize,
    l2: f64,
}

impl Problem {
    fn logit(&self, row: &Row, b: f64, w: &[f64]) -> f64 {
        b + row.active.iter().map(|&k| w[k]).sum::<f64>()
    }

    /// Mean negative log-likelihood plus `l2/2 ‖w‖²`.
    fn loss(&self, b: f64, w: &[f64]) -> f64 {
        let nll: f64 = self
            .rows
            .iter()
            .map(|r| {
                let z = self.logit(r, b, w);
                r.n * softplus(z) - r.y * z
            })
            .sum();
        nll / self.total + 0.5 * self.l2 * w.iter().map(|x| x * x).sum::<f64>()
    }

    fn gradient(&self, b: f64, w: &[f64]) -> (f64, Vec<f64>) {
        let mut gb = 0.0;
        let mut gw: Vec<f64> = w.iter().map(|x| self.l2 * x).collect();
        for r in &self.rows {
            let resid = (r.n * sigmoid(self.logit(r, b, w)) - r.y) / self.total;
            gb += resid;
            for &k in &r.active {
                gw[k] += resid;
            }
        }
        (gb, gw)
    }
}

/// Resolves attribute-name pairs to index pairs.
pub fn resolve_interactions(schema: &Schema, pairs: &[(String, String)]) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let ia = schema
                .attribute_index(a)
                .ok_or_else(|| Error::schema(format!("unknown interaction attribute '{a}'")))?;
            let ib = schema
                .attribute_index(b)
                .ok_or_else(|| Error::schema(format!("unknown interaction attribute '{b}'")))?;
            if ia == ib {
                return Err(Error::invalid(format!("interaction of '{a}' with itself")));
            }
            Ok((ia, ib))
        })
        .collect()
}

pub fn fit_logistic(
    train: &Dataset,
    interactions: &[(usize, usize)],
    params: &LogisticParams,
) -> Result<LogisticModel> {
    fit_logistic_traced(train, interactions, params).map(|(m, _)| m)
}

/// [`fit_logistic`] that also returns the loss after every iteration.
pub fn fit_logistic_traced(
    train: &Dataset,
    interactions: &[(usize, usize)],
    params: &LogisticParams,
) -> Result<(LogisticModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::precondition("cannot fit on an empty training set"));
    }
    let q = train.schema.arity();
    if let Some(&(a, b)) = interactions.iter().find(|&&(a, b)| a >= q || b >= q || a == b) {
        return Err(Error::invalid(format!("invalid interaction pair ({a}, {b})")));
    }
    if params.l2.is_nan() || params.l2 < 0.0 {
        return Err(Error::invalid("l2 must be non-negative"));
    }
    let layout = Layout::new(&train.schema, interactions);

    let mut agg: BTreeMap<&[u32], (f64, f64)> = BTreeMap::new();
    for r in &train.records {
        let e = agg.entry(&r.values).or_default();
        e.0 += 1.0;
        e.1 += if r.y { 1.0 } else { 0.0 };
    }
    let rows: Vec<Row> = agg
        .into_iter()
        .map(|(values, (n, y))| {
            let profile: Vec<Option<u32>> = values.iter().map(|&v| Some(v)).collect();
            Row {
                active: layout.active(&profile),
                n,
                y,
            }
        })
        .collect();
    let problem = Problem {
        total: train.len() as f64,
        width: layout.width,
        l2: params.l2,
        rows,
    };

    let max_sq_norm = problem
        .rows
        .iter()
        .map(|r| (r.active.len() + 1) as f64)
        .fold(1.0, f64::max);
    let lr = match params.learning_rate {
        Some(lr) if lr > 0.0 && lr.is_finite() => lr,
        Some(lr) => return Err(Error::invalid(format!("learning rate must be positive, got {lr}"))),
        None => 1.0 / (0.25 * max_sq_norm + params.l2),
    };

    let mut b = 0.0;
    let mut w = vec![0.0; problem.width];
    let initial_loss = problem.loss(b, &w);
    let mut loss = initial_loss;
    let mut losses = Vec::new();
    let mut increases = 0;
    let mut iterations = 0;
    let (mut gb, mut gw) = problem.gradient(b, &w);
    let grad_norm = |gb: f64, gw: &[f64]| (gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt();
    let mut gnorm = grad_norm(gb, &gw);
    while iterations < params.max_iterations && gnorm > params.gradient_tolerance {
        b -= lr * gb;
        for (wk, gk) in w.iter_mut().zip(&gw) {
            *wk -= lr * gk;
        }
        iterations += 1;
        let next = problem.loss(b, &w);
        if !next.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                loss: next,
                initial_loss,
            });
        }
        if next > loss {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iteration: iterations,
                    loss: next,
                    initial_loss,
                });
            }
        } else {
            increases = 0;
        }
        loss = next;
        losses.push(loss);
        (gb, gw) = problem.gradient(b, &w);
        gnorm = grad_norm(gb, &gw);
    }

    let model = LogisticModel {
        schema: train.schema.clone(),
        interactions: interactions.to_vec(),
        intercept: b,
        weights: w,
        params: params.clone(),
        summary: TrainingSummary {
            iterations,
            final_loss: loss,
            gradient_norm: gnorm,
            converged: gnorm <= params.gradient_tolerance,
            learning_rate: lr,
        },
        layout,
    };
    Ok((model, losses))
}

impl LogisticModel {
    /// Unclamped `sigmoid(b + w·x)` for a (possibly partial) profile.
    pub fn raw_probability(&self, profile: &[Option<u32>]) -> f64 {
        let z = self.intercept
            + self
                .layout
                .active(profile)
                .into_iter()
                .map(|k| self.weights[k])
                .sum::<f64>();
        sigmoid(z)
    }

    pub(crate) fn predict_probs(&self, d: &Dataset) -> Result<Vec<f64>> {
        let map = ValueMap::new(&self.schema, &d.schema)?;
        Ok(d.records
            .iter()
            .map(|r| clamp_probability(self.raw_probability(&map.translate_partial(&r.values))))
            .collect())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.layout.names(&self.schema)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let weights: serde_json::Map<String, serde_json::Value> = self
            .feature_names()
            .into_iter()
            .zip(&self.weights)
            .map(|(n, &w)| (n, w.into()))
            .collect();
        let interactions: Vec<[&str; 2]> = self
            .interactions
            .iter()
            .map(|&(a, b)| {
                [
                    self.schema.attributes[a].name.as_str(),
                    self.schema.attributes[b].name.as_str(),
                ]
            })
            .collect();
        serde_json::json!({
            "kind": "logistic",
            "intercept": self.intercept,
            "weights": weights,
            "interactions": interactions,
            "params": self.params,
            "training": self.summary,
        })
    }
}
