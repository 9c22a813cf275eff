use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{finish_trial, prepare_trial};
use super::{check_alpha, check_fraction, order_free_mean, DataSource, ScanOptions, TrialRecord, TrialSeeds};
use crate::classifiers::ClassifierConfig;
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::tabular::{format_g17, Subgroup};
use crate::theory::threshold_constants;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// `{attribute: [values]}`; unnamed attributes are unconstrained.
    pub target: BTreeMap<String, Vec<String>>,
    pub deltas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub scan: ScanOptions,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::invalid("empty delta grid"));
        }
        if let Some(d) = self.deltas.iter().find(|&&d| !(d >= 1.0 && d.is_finite())) {
            return Err(Error::invalid(format!("delta grid values must be >= 1, got {d}")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.scan.iterations == 0 {
            return Err(Error::invalid("scan iterations must be at least 1"));
        }
        check_fraction(self.train_fraction)?;
        check_alpha(self.alpha)
    }
}

/// Aggregates over the trials of one `Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRow {
    pub delta: f64,
    pub trials: usize,
    pub mean_f_star: f64,
    pub mean_f_target: f64,
    pub mean_f_theo: f64,
    pub mean_f_old: f64,
    pub mean_overlap: f64,
    pub detection_rate: f64,
    /// Mean of `|F(S^T) − F_theo| / F_theo` over trials with `F_theo > 0`.
    pub mean_relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub k1: f64,
    pub k2: f64,
    pub mean_m: f64,
    pub mean_h_alpha: f64,
    pub mean_delta_thresh: f64,
    pub small_m_warning: bool,
    pub rows: Vec<DeltaRow>,
    pub trials: Vec<TrialRecord>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_in(config, None)
}

/// [`run_experiment`] with relative CSV paths resolved against `base`.
pub fn run_experiment_in(config: &ExperimentConfig, base: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let data = config.data.load(base)?;
    let target = Subgroup::from_named(&data.schema, &config.target)?;

    let bases = map_indexed(config.trials, |t| {
        prepare_trial(config, &data, &target, TrialSeeds::derive(config.seed, 0, t))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n_deltas = config.deltas.len();
    let trials = map_indexed(n_deltas * config.trials, |k| {
        let (di, t) = (k / config.trials, k % config.trials);
        finish_trial(
            config,
            &bases[t],
            &target,
            config.deltas[di],
            t,
            TrialSeeds::derive(config.seed, di, t),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows = config
        .deltas
        .iter()
        .zip(trials.chunks(config.trials))
        .map(|(&delta, chunk)| aggregate(delta, chunk))
        .collect();

    let first = &trials[..config.trials];
    let c = threshold_constants();
    let mean_m = order_free_mean(&first.iter().map(|t| t.m as f64).collect::<Vec<_>>());
    Ok(ExperimentReport {
        config: config.clone(),
        k1: c.k1,
        k2: c.k2,
        mean_m,
        mean_h_alpha: order_free_mean(&first.iter().map(|t| t.h_alpha).collect::<Vec<_>>()),
        mean_delta_thresh: order_free_mean(&first.iter().map(|t| t.delta_thresh).collect::<Vec<_>>()),
        small_m_warning: first.iter().any(|t| t.m <= crate::theory::MIN_GAUSSIAN_PROFILES),
        rows,
        trials,
    })
}

fn aggregate(delta: f64, trials: &[TrialRecord]) -> DeltaRow {
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| order_free_mean(&trials.iter().map(f).collect::<Vec<_>>());
    let rel: Vec<f64> = trials.iter().filter_map(|t| t.relative_error).collect();
    DeltaRow {
        delta,
        trials: trials.len(),
        mean_f_star: mean(&|t| t.f_star),
        mean_f_target: mean(&|t| t.f_target),
        mean_f_theo: mean(&|t| t.f_theo),
        mean_f_old: mean(&|t| t.f_old),
        mean_overlap: mean(&|t| t.overlap),
        detection_rate: mean(&|t| if t.detected { 1.0 } else { 0.0 }),
        mean_relative_error: (!rel.is_empty()).then(|| order_free_mean(&rel)),
    }
}

const CSV_HEADER: [&str; 11] = [
    "delta",
    "trials",
    "mean_f_star",
    "mean_f_target",
    "mean_f_theo",
    "mean_f_old",
    "mean_overlap",
    "detection_rate",
    "mean_relative_error",
    "mean_h_alpha",
    "mean_delta_thresh",
];

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per `Δ`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                format_g17(r.delta),
                r.trials.to_string(),
                format_g17(r.mean_f_star),
                format_g17(r.mean_f_target),
                format_g17(r.mean_f_theo),
                format_g17(r.mean_f_old),
                format_g17(r.mean_overlap),
                format_g17(r.detection_rate),
                r.mean_relative_error.map(format_g17).unwrap_or_default(),
                format_g17(self.mean_h_alpha),
                format_g17(self.mean_delta_thresh),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
