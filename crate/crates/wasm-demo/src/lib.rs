//! Browser bindings for three interactive views of the auditor: the
//! propagated-score curve, the critical value and a full inject-and-scan run
//! on synthetic data. Every export returns a JSON string; failures come back
//! as `{"error": "..."}`.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use biasprop::classifiers::ClassifierConfig;
use biasprop::harness::{
    run_pipeline, synth_generate, DataSource, ExperimentConfig, GeneratorSpec, ScanOptions,
    TrialSeeds,
};
use biasprop::tabular::{subgroup_members, Subgroup};
use biasprop::theory::{critical_value, delta_threshold_for, theoretical_score};
use biasprop::Result;

fn respond(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn parse_target(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    Ok(serde_json::from_str(text)?)
}

fn theory_curve_impl(n: usize, seed: u64, target: &str, alpha: f64, delta_max: f64, steps: usize) -> Result<Value> {
    let data = synth_generate(&GeneratorSpec::compas_like(n, seed))?;
    let target = Subgroup::from_named(&data.schema, &parse_target(target)?)?;
    let group = subgroup_members(&data, &target)?.outcomes()?;
    let spec = critical_value(data.distinct_profiles(), alpha)?;
    let steps = steps.max(2);
    let mut deltas = Vec::with_capacity(steps);
    let mut scores = Vec::with_capacity(steps);
    for i in 0..steps {
        let d = 1.0 + (delta_max - 1.0) * i as f64 / (steps - 1) as f64;
        deltas.push(d);
        scores.push(theoretical_score(&group, d)?.f_theo);
    }
    let thresh = delta_threshold_for(&group, spec.h_alpha)?;
    Ok(json!({
        "deltas": deltas,
        "f_theo": scores,
        "h_alpha": spec.h_alpha,
        "m": spec.m,
        "delta_thresh": thresh.delta_thresh,
        "n_target": group.len(),
    }))
}

/// `F_theo(S^T)` over an even `Δ` grid on compas-like data, with `h(α)` and
/// `Δ_thresh`.
#[wasm_bindgen]
pub fn theory_curve(n: usize, seed: u32, target: &str, alpha: f64, delta_max: f64, steps: usize) -> String {
    respond(theory_curve_impl(n, seed.into(), target, alpha, delta_max, steps))
}

fn critical_curve_impl(m_max: usize, alpha: f64) -> Result<Value> {
    let ms: Vec<usize> = (1..=m_max.max(1)).collect();
    let hs = ms
        .iter()
        .map(|&m| critical_value(m, alpha).map(|s| s.h_alpha))
        .collect::<Result<Vec<_>>>()?;
    let at_max = critical_value(*ms.last().expect("non-empty"), alpha)?;
    Ok(json!({ "m": ms, "h_alpha": hs, "spec": at_max }))
}

/// `h(α)` for `M = 1..=m_max`.
#[wasm_bindgen]
pub fn critical_curve(m_max: usize, alpha: f64) -> String {
    respond(critical_curve_impl(m_max, alpha))
}

fn scan_demo_impl(
    n: usize,
    seed: u64,
    target: &str,
    delta: f64,
    iterations: usize,
    alpha: f64,
    logistic: bool,
) -> Result<Value> {
    let config = ExperimentConfig {
        data: DataSource::Preset {
            name: "compas_like".into(),
            n,
            seed,
        },
        classifier: if logistic {
            ClassifierConfig::Logistic {
                interactions: Vec::new(),
                params: Default::default(),
            }
        } else {
            ClassifierConfig::default()
        },
        target: parse_target(target)?,
        deltas: vec![delta],
        trials: 1,
        train_fraction: 0.8,
        scan: ScanOptions {
            iterations,
            ..Default::default()
        },
        alpha,
        seed,
    };
    let data = config.data.load(None)?;
    let record = run_pipeline(&config, &data, delta, 0, TrialSeeds::derive(seed, 0, 0))?;
    Ok(serde_json::to_value(record)?)
}

/// Injects `Δ` into the target of a compas-like training split, trains,
/// predicts the untouched test split and scans it.
#[wasm_bindgen]
pub fn scan_demo(n: usize, seed: u32, target: &str, delta: f64, iterations: usize, alpha: f64, logistic: bool) -> String {
    respond(scan_demo_impl(n, seed.into(), target, delta, iterations, alpha, logistic))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn curve_is_increasing() {
        let v = parse(&theory_curve(4000, 1, r#"{"sex": ["Female"]}"#, 0.05, 8.0, 15));
        let f: Vec<f64> = v["f_theo"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(f.len(), 15);
        assert!(f.windows(2).all(|w| w[1] >= w[0]));
        assert!(v["delta_thresh"].as_f64().unwrap() >= 1.0);
    }

    #[test]
    fn critical_curve_shape() {
        let v = parse(&critical_curve(50, 0.05));
        assert_eq!(v["h_alpha"].as_array().unwrap().len(), 50);
        assert_eq!(v["spec"]["m"], 50);
    }

    #[test]
    fn scan_demo_runs() {
        let v = parse(&scan_demo(4000, 2, r#"{"sex": ["Female"]}"#, 6.0, 5, 0.05, false));
        assert!(v["f_star"].as_f64().unwrap() > 0.0);
        assert!(v.get("error").is_none());
    }

    #[test]
    fn errors_are_json() {
        let v = parse(&theory_curve(100, 1, "not json", 0.05, 4.0, 5));
        assert!(v["error"].is_string());
        let v = parse(&critical_curve(10, 1.5));
        assert!(v["error"].is_string());
    }
}
