use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use biasprop::harness::{
    null_simulation, run_experiment_in, synth_generate, DataSource, GeneratorSpec, NullSimConfig,
    ScanOptions,
};
use biasprop::inject::{inject_bias, BiasSpec};
use biasprop::scan::{randomization_test, scan_dataset, AttributeMode};
use biasprop::tabular::{
    build_profile_table, load_dataset, subgroup_members, to_csv_string, ColumnRoles, Dataset,
    Subgroup,
};
use biasprop::theory::{
    asymptotic_normalized_score, critical_value, critical_value_with, delta_threshold_for,
    theoretical_score, threshold_constants,
};
use biasprop::Error;

#[derive(Parser)]
#[command(name = "biasprop", version, about = "Subset-scan bias auditing and bias-propagation experiments")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the subgroup whose predicted probabilities are most over-estimated.
    Scan(ScanCmd),
    /// Inject differential sampling bias into a training CSV.
    Inject(InjectCmd),
    /// Propagated score of a target subgroup for a given bias.
    Theory(TheoryCmd),
    /// Critical value h(alpha) and, for a target, the minimum detectable bias.
    Thresh(ThreshCmd),
    /// False-positive rate of the scan on unbiased synthetic data.
    Nullsim(NullsimCmd),
    /// Sweep the injected bias and compare detection with theory.
    Experiment(ExperimentCmd),
    /// Write a synthetic dataset.
    Generate(GenerateCmd),
}

#[derive(Args)]
struct Input {
    /// Input CSV.
    input: PathBuf,
    /// Outcome column (default `y`).
    #[arg(long)]
    outcome: Option<String>,
    /// Probability column (default `p` if present).
    #[arg(long)]
    prob: Option<String>,
}

impl Input {
    fn load(&self) -> Result<Dataset, Error> {
        let roles = ColumnRoles {
            outcome: self.outcome.clone(),
            probability: self.prob.clone(),
            ..Default::default()
        };
        load_dataset(&self.input, &roles)
    }
}

#[derive(Args)]
struct ScanFlags {
    /// Random restarts.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<AttributeMode>,
}

impl ScanFlags {
    fn apply(&self, mut o: ScanOptions) -> ScanOptions {
        if let Some(i) = self.iterations {
            o.iterations = i;
        }
        if let Some(m) = self.mode {
            o.mode = m;
        }
        o
    }
}

fn parse_mode(s: &str) -> Result<AttributeMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct ScanCmd {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    scan: ScanFlags,
    /// Null replicas for a randomization-test p-value (0 skips the test).
    #[arg(long, default_value_t = 0)]
    replicas: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InjectCmd {
    #[command(flatten)]
    input: Input,
    /// BiasSpec JSON file.
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the bias file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryCmd {
    #[command(flatten)]
    input: Input,
    /// Target subgroup as inline JSON `{"attr": ["value", ...]}` or a file.
    #[arg(long)]
    target: String,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThreshCmd {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Target subgroup; adds the minimum detectable bias to the output.
    #[arg(long)]
    target: Option<String>,
    /// Override for the derived k1.
    #[arg(long, requires = "k2")]
    k1: Option<f64>,
    /// Override for the derived k2.
    #[arg(long, requires = "k1")]
    k2: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NullsimCmd {
    /// NullSimConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator preset used when no config is given.
    #[arg(long, default_value = "compas_like")]
    preset: String,
    /// Records per simulated dataset (preset only).
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    scan: ScanFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentCmd {
    /// ExperimentConfig JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    scan: ScanFlags,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-delta CSV summary.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateCmd {
    /// GeneratorSpec JSON; without it the preset is used.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "compas_like")]
    preset: String,
    #[arg(long, default_value_t = 40_000)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Data(other),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(Error::Io {
        path: path.to_owned(),
        source: e,
    }))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Data(e.into()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| {
            Failure::Data(Error::Io {
                path: path.to_owned(),
                source: e,
            })
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Data(Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                }))
        }
    }
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.into()))?;
    text.push('\n');
    emit(out, &text)
}

fn parse_target(d: &Dataset, raw: &str) -> Result<Subgroup, Failure> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_owned()
    } else {
        read_text(Path::new(raw))?
    };
    let named: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad target: {e}")))?;
    Ok(Subgroup::from_named(&d.schema, &named)?)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn run_scan(cmd: &ScanCmd) -> Result<(), Failure> {
    let d = cmd.input.load()?;
    let settings = cmd.scan.apply(ScanOptions::default()).with_seed(cmd.scan.seed.unwrap_or(0));
    let result = scan_dataset(&d, &settings)?;
    let mut out = result.to_json_value(&d.schema);
    if cmd.replicas > 0 {
        let sig = randomization_test(&d, result.eval.score, cmd.replicas, &settings)?;
        out["significance"] = to_value(&sig);
    }
    emit_json(cmd.out.as_deref(), &out)
}

fn run_inject(cmd: &InjectCmd) -> Result<(), Failure> {
    let d = cmd.input.load()?;
    let mut spec = BiasSpec::from_json(&d.schema, &read_text(&cmd.spec)?)?;
    if let Some(s) = cmd.seed {
        spec.seed = s;
    }
    let biased = inject_bias(&d, &spec)?;
    emit(cmd.out.as_deref(), &to_csv_string(&biased)?)
}

fn run_theory(cmd: &TheoryCmd) -> Result<(), Failure> {
    let d = cmd.input.load()?;
    let target = parse_target(&d, &cmd.target)?;
    let members = subgroup_members(&d, &target)?;
    let group = members.outcomes()?;
    let report = theoretical_score(&group, cmd.delta)?;
    let table = build_profile_table(&members)?;
    let n_target = members.len() as f64;
    let dist: Vec<(f64, f64)> = table
        .profiles
        .values()
        .map(|s| (s.p, s.n as f64 / n_target))
        .collect();
    let mass = n_target / d.len() as f64;
    let mut out = to_value(&report);
    out["target"] = target.to_json_value(&d.schema);
    out["n_records"] = json!(d.len());
    out["n_target"] = json!(members.len());
    out["normalized_score"] = json!(report.f_theo / d.len() as f64);
    out["asymptotic_normalized_score"] = json!(asymptotic_normalized_score(cmd.delta, mass, &dist)?);
    emit_json(cmd.out.as_deref(), &out)
}

fn run_thresh(cmd: &ThreshCmd) -> Result<(), Failure> {
    let d = cmd.input.load()?;
    let m = d.distinct_profiles();
    let spec = match (cmd.k1, cmd.k2) {
        (Some(k1), Some(k2)) => critical_value_with(m, cmd.alpha, k1, k2)?,
        _ => critical_value(m, cmd.alpha)?,
    };
    if spec.small_m_warning {
        eprintln!("warning: M = {m} is too small for the Gaussian approximation behind h(alpha)");
    }
    let mut out = json!({ "threshold": spec, "constants": threshold_constants() });
    if let Some(raw) = &cmd.target {
        let target = parse_target(&d, raw)?;
        let group = subgroup_members(&d, &target)?.outcomes()?;
        out["target"] = target.to_json_value(&d.schema);
        out["delta_threshold"] = to_value(&delta_threshold_for(&group, spec.h_alpha)?);
    }
    emit_json(cmd.out.as_deref(), &out)
}

fn run_nullsim(cmd: &NullsimCmd) -> Result<(), Failure> {
    let mut config: NullSimConfig = match &cmd.config {
        Some(path) => read_json(path)?,
        None => NullSimConfig {
            data: DataSource::Preset {
                name: cmd.preset.clone(),
                n: cmd.n,
                seed: 0,
            },
            classifier: Default::default(),
            train_fraction: 0.8,
            scan: ScanOptions::default(),
            n_runs: 200,
            alpha: 0.05,
            seed: 0,
        },
    };
    config.scan = cmd.scan.apply(config.scan);
    if let Some(s) = cmd.scan.seed {
        config.seed = s;
    }
    if let Some(r) = cmd.runs {
        config.n_runs = r;
    }
    if let Some(a) = cmd.alpha {
        config.alpha = a;
    }
    let report = null_simulation(&config)?;
    emit_json(cmd.out.as_deref(), &json!({ "config": config, "report": report }))
}

fn run_experiment_cmd(cmd: &ExperimentCmd) -> Result<(), Failure> {
    let mut config: biasprop::harness::ExperimentConfig = read_json(&cmd.config)?;
    config.scan = cmd.scan.apply(config.scan);
    if let Some(s) = cmd.scan.seed {
        config.seed = s;
    }
    if let Some(a) = cmd.alpha {
        config.alpha = a;
    }
    let base = cmd.config.parent().filter(|p| !p.as_os_str().is_empty());
    let report = run_experiment_in(&config, base)?;
    if let Some(path) = &cmd.csv {
        emit(Some(path), &report.to_csv_string()?)?;
    }
    emit(cmd.out.as_deref(), &report.to_json()?)
}

fn run_generate(cmd: &GenerateCmd) -> Result<(), Failure> {
    let mut spec = match &cmd.spec {
        Some(path) => read_json(path)?,
        None => GeneratorSpec::preset(&cmd.preset, cmd.n, 0)?,
    };
    if let Some(s) = cmd.seed {
        spec.seed = s;
    }
    emit(cmd.out.as_deref(), &to_csv_string(&synth_generate(&spec)?)?)
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Scan(c) => run_scan(c),
        Command::Inject(c) => run_inject(c),
        Command::Theory(c) => run_theory(c),
        Command::Thresh(c) => run_thresh(c),
        Command::Nullsim(c) => run_nullsim(c),
        Command::Experiment(c) => run_experiment_cmd(c),
        Command::Generate(c) => run_generate(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
