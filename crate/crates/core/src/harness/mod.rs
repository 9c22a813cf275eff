//! Experiment engine: synthetic generators, the split/inject/train/predict/
//! scan pipeline, Δ sweeps and null simulations.

mod experiment;
mod nullsim;
mod pipeline;
mod synth;

pub use experiment::{run_experiment, run_experiment_in, DeltaRow, ExperimentConfig, ExperimentReport};
pub use nullsim::{null_simulation, HistogramBin, NullSimConfig, NullSimReport};
pub use pipeline::{run_pipeline, split_dataset, TrialRecord, TrialSeeds};
pub use synth::{synth_generate, GenAttribute, GeneratorSpec, ProfileOverride};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{AttributeMode, ScanSettings, DEFAULT_ITERATIONS};
use crate::tabular::{load_dataset, ColumnRoles, Dataset};

/// JSON schema of [`ExperimentReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/experiment_report.schema.json");

/// Scan parameters shared by every trial; seeds are derived per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub iterations: usize,
    pub mode: AttributeMode,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            iterations: DEFAULT_ITERATIONS,
            mode: AttributeMode::Ltss,
        }
    }
}

impl ScanOptions {
    pub fn with_seed(self, seed: u64) -> ScanSettings {
        ScanSettings {
            iterations: self.iterations,
            seed,
            mode: self.mode,
        }
    }
}

/// Where experiment data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generator(GeneratorSpec),
    Preset {
        name: String,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A CSV whose `p` column, if present, is taken as the true conditional.
    Csv {
        path: PathBuf,
        #[serde(default)]
        outcome: Option<String>,
        #[serde(default)]
        probability: Option<String>,
    },
}

impl DataSource {
    /// The generator behind this source, if it is synthetic.
    pub fn generator(&self) -> Result<Option<GeneratorSpec>> {
        match self {
            DataSource::Generator(spec) => Ok(Some(spec.clone())),
            DataSource::Preset { name, n, seed } => GeneratorSpec::preset(name, *n, *seed).map(Some),
            DataSource::Csv { .. } => Ok(None),
        }
    }

    /// Materializes the data. Relative CSV paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<Dataset> {
        match self {
            DataSource::Csv {
                path,
                outcome,
                probability,
            } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let roles = ColumnRoles {
                    outcome: outcome.clone(),
                    probability: probability.clone(),
                    ..Default::default()
                };
                load_dataset(path, &roles)
            }
            _ => synth_generate(&self.generator()?.expect("synthetic source")),
        }
    }
}

/// Jaccard coefficient `|a ∩ b| / |a ∪ b|`, 0 when both are empty.
pub fn overlap(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Mean over a sorted copy, so the result does not depend on input order.
pub(crate) fn order_free_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}
