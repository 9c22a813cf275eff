use serde::{Deserialize, Serialize};

use super::pipeline::split_dataset;
use super::{check_alpha, check_fraction, order_free_mean, synth_generate, DataSource, ScanOptions};
use crate::classifiers::{predict, ClassifierConfig, Model};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::derive_seed;
use crate::scan::scan_dataset;
use crate::tabular::ProbSemantics;
use crate::theory::critical_value;

const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullSimConfig {
    /// Must be synthetic; every run regenerates its own data.
    pub data: DataSource,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub scan: ScanOptions,
    pub n_runs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullSimReport {
    pub n_runs: usize,
    pub alpha: f64,
    pub exceedances: usize,
    pub false_positive_rate: f64,
    /// `α + 3·sqrt(α(1−α)/n_runs)`.
    pub binomial_bound: f64,
    pub mean_h_alpha: f64,
    pub mean_m: f64,
    pub scores: Vec<f64>,
    pub h_alphas: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Generates unbiased data, trains, predicts and scans `n_runs` times and
/// counts how often `F*` exceeds `h(α)`.
pub fn null_simulation(config: &NullSimConfig) -> Result<NullSimReport> {
    if config.n_runs == 0 {
        return Err(Error::invalid("n_runs must be at least 1"));
    }
    check_alpha(config.alpha)?;
    check_fraction(config.train_fraction)?;
    let generator = config
        .data
        .generator()?
        .ok_or_else(|| Error::invalid("null simulation needs a synthetic data source"))?;

    let runs = map_indexed(config.n_runs, |r| -> Result<(f64, f64, usize)> {
        let run_seed = derive_seed(config.seed, &[r as u64]);
        let mut spec = generator.clone();
        spec.seed = derive_seed(run_seed, &[0]);
        let data = synth_generate(&spec)?;
        let (train, test) = split_dataset(&data, config.train_fraction, derive_seed(run_seed, &[1]))?;
        let model = Model::fit(&config.classifier, &train)?;
        let scored = predict(&model, &test, ProbSemantics::UnbiasedPred)?;
        let result = scan_dataset(&scored, &config.scan.with_seed(derive_seed(run_seed, &[2])))?;
        let m = test.distinct_profiles();
        let h = critical_value(m, config.alpha)?.h_alpha;
        Ok((result.eval.score, h, m))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let h_alphas: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let exceedances = runs.iter().filter(|r| r.0 > r.1).count();
    let n = config.n_runs as f64;
    let a = config.alpha;
    Ok(NullSimReport {
        n_runs: config.n_runs,
        alpha: a,
        exceedances,
        false_positive_rate: exceedances as f64 / n,
        binomial_bound: a + 3.0 * (a * (1.0 - a) / n).sqrt(),
        mean_h_alpha: order_free_mean(&h_alphas),
        mean_m: order_free_mean(&runs.iter().map(|r| r.2 as f64).collect::<Vec<_>>()),
        histogram: histogram(&scores, HISTOGRAM_BINS),
        scores,
        h_alphas,
    })
}

fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        let b = ((v / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}
