//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use biasprop::harness::{
    null_simulation, run_experiment, synth_generate, ExperimentConfig, ExperimentReport,
    GeneratorSpec, NullSimConfig,
};
use biasprop::inject::{biased_conditional, estimate_delta};
use biasprop::rng::{derive_seed, rng_from_seed, Rng};
use biasprop::scan::{bias_scan, score_subgroup, AttributeMode, ScanData, ScanSettings};
use biasprop::tabular::{read_csv, to_csv_string, ColumnRoles, Dataset, ProbSemantics, Record};
use biasprop::theory::{
    critical_value, delta_threshold_for, theoretical_score, threshold_constants_with_step,
    DEFAULT_GRID_STEP,
};
use rand::Rng as _;

const SEED: u64 = 20_240_601;
const BENCH_N: usize = 40_000;
const BENCH_TRIALS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn constants() -> Outcome {
    let start = Instant::now();
    let c = threshold_constants_with_step(DEFAULT_GRID_STEP);
    let t = start.elapsed();
    let pass = (c.k1 - 0.202456).abs() <= 1e-4 && (c.k2_squared - 0.273709).abs() <= 1e-4 && within(t, 1.0);
    outcome(
        pass,
        format!("k1={:.6} k2^2={:.6} in {:.3}s", c.k1, c.k2_squared, t.as_secs_f64()),
    )
}

fn random_group(rng: &mut Rng) -> Vec<(bool, f64)> {
    loop {
        let n = rng.gen_range(1..=200);
        let lift = rng.gen_range(0.3..1.5);
        let g: Vec<(bool, f64)> = (0..n)
            .map(|_| {
                let p: f64 = rng.gen_range(0.01..0.99);
                (rng.gen_bool((p * lift).min(0.999)), p)
            })
            .collect();
        if g.iter().any(|r| !r.0) {
            return g;
        }
    }
}

fn propagation_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(SEED, &[2]));
    let (mut worst, mut applicable, mut failures) = (0.0f64, 0, 0);
    for _ in 0..10_000 {
        let g = random_group(&mut rng);
        let delta = if rng.gen_bool(0.1) { 1.0 } else { rng.gen_range(1.0..12.0) };
        let report = theoretical_score(&g, delta).unwrap();
        let shifted: Vec<(bool, f64)> =
            g.iter().map(|&(y, p)| (y, biased_conditional(p, delta).unwrap())).collect();
        let direct = score_subgroup(&shifted).score;
        if report.applicable {
            applicable += 1;
            let err = (direct - report.f_theo).abs();
            worst = worst.max(err);
            if err > 1e-9 {
                failures += 1;
            }
        } else if direct != 0.0 || report.f_theo != 0.0 {
            failures += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && within(t, 30.0),
        format!(
            "{failures} failures, {applicable} applicable cases, max error {worst:.2e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn random_instance(rng: &mut Rng) -> Dataset {
    let q = rng.gen_range(1..=3);
    let arities: Vec<usize> = (0..q).map(|_| rng.gen_range(1..=3)).collect();
    let m: usize = arities.iter().product();
    let probs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
    let lifts: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.3) { 0.4 } else { 1.0 }).collect();
    let n = rng.gen_range(1..=60);
    let records = (0..n)
        .map(|_| {
            let values: Vec<u32> = arities.iter().map(|&a| rng.gen_range(0..a as u32)).collect();
            let k = values.iter().zip(&arities).fold(0, |k, (&v, &a)| k * a + v as usize);
            Record::with_p(values, rng.gen_bool(probs[k] * lifts[k]), probs[k])
        })
        .collect();
    Dataset::new(common::schema(&arities), records, ProbSemantics::BiasedPred).unwrap()
}

fn scan_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(SEED, &[3]));
    let (mut exact, mut exceeded, mut ltss_agrees) = (0, 0, 0);
    for i in 0..100u64 {
        let d = random_instance(&mut rng);
        let data = ScanData::from_dataset(&d).unwrap();
        let brute = common::brute_force_max(&data);
        let settings = |mode| ScanSettings {
            iterations: 50,
            seed: derive_seed(SEED, &[30, i]),
            mode,
        };
        let full = bias_scan(&data, &settings(AttributeMode::Exhaustive)).unwrap().eval.score;
        let ltss = bias_scan(&data, &settings(AttributeMode::Ltss)).unwrap().eval.score;
        let tol = 1e-9 * brute.max(1.0);
        if (full - brute).abs() <= tol {
            exact += 1;
        }
        if full > brute + tol {
            exceeded += 1;
        }
        if (ltss - full).abs() <= tol {
            ltss_agrees += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        exact >= 99 && exceeded == 0 && ltss_agrees >= 95 && within(t, 120.0),
        format!(
            "exhaustive matches brute force {exact}/100, exceeds {exceeded}, ltss agrees {ltss_agrees}/100, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn benchmark_config(deltas: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        data: biasprop::harness::DataSource::Preset {
            name: "compas_like".into(),
            n: BENCH_N,
            seed: derive_seed(SEED, &[4]),
        },
        classifier: Default::default(),
        target: BTreeMap::from([("sex".to_string(), vec!["Female".to_string()])]),
        deltas,
        trials: BENCH_TRIALS,
        train_fraction: 0.8,
        scan: Default::default(),
        alpha: 0.05,
        seed: derive_seed(SEED, &[40]),
    }
}

fn row_for(report: &ExperimentReport, delta: f64) -> &biasprop::harness::DeltaRow {
    report.rows.iter().find(|r| r.delta == delta).expect("delta in grid")
}

fn convergence(bench: &ExperimentReport, elapsed: Duration) -> Outcome {
    let cutoff = f64::max(2.0, 1.5 * bench.mean_delta_thresh);
    let mut pass = within(elapsed, 600.0);
    let mut parts = Vec::new();
    for delta in [2.0, 4.0, 6.0] {
        let row = row_for(bench, delta);
        let rel = row.mean_relative_error.unwrap_or(f64::INFINITY);
        pass &= rel <= 0.10;
        if delta >= cutoff {
            pass &= row.mean_overlap >= 0.95;
        }
        parts.push(format!("delta={delta}: rel.err {rel:.4} overlap {:.3}", row.mean_overlap));
    }
    let data = synth_generate(&GeneratorSpec::compas_like(BENCH_N, derive_seed(SEED, &[4]))).unwrap();
    let mass = data.records.iter().filter(|r| r.values[0] == 1).count() as f64 / data.len() as f64;
    outcome(
        pass,
        format!(
            "{}; overlap required from delta {cutoff:.3}; target mass {mass:.3}; {:.1}s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn null_calibration() -> Outcome {
    let start = Instant::now();
    let config = NullSimConfig {
        data: biasprop::harness::DataSource::Preset {
            name: "compas_like".into(),
            n: 20_000,
            seed: 0,
        },
        classifier: Default::default(),
        train_fraction: 0.8,
        scan: Default::default(),
        n_runs: 200,
        alpha: 0.05,
        seed: derive_seed(SEED, &[5]),
    };
    let r = null_simulation(&config).unwrap();
    let t = start.elapsed();
    let h48 = critical_value(48, 0.05).unwrap().h_alpha;
    let enough_profiles = r.h_alphas.iter().all(|&h| h >= h48);
    outcome(
        r.false_positive_rate <= 0.096 && enough_profiles && within(t, 900.0),
        format!(
            "{} of 200 exceed h, rate {:.3}, mean M {:.1}, max F* {:.2} vs mean h {:.2}, {:.1}s",
            r.exceedances,
            r.false_positive_rate,
            r.mean_m,
            r.scores.iter().copied().fold(0.0, f64::max),
            r.mean_h_alpha,
            t.as_secs_f64()
        ),
    )
}

fn power_curve(bench: &ExperimentReport) -> Outcome {
    let rates: Vec<f64> = [1.0, 2.0, 4.0, 8.0].iter().map(|&d| row_for(bench, d).detection_rate).collect();
    let n = BENCH_TRIALS as f64;
    let mut inversions = 0;
    let mut within_noise = true;
    for w in rates.windows(2) {
        if w[1] < w[0] {
            inversions += 1;
            let sigma = ((w[0] * (1.0 - w[0]) + w[1] * (1.0 - w[1])) / n).sqrt();
            within_noise &= w[0] - w[1] <= 2.0 * sigma;
        }
    }
    outcome(
        inversions <= 1 && within_noise && rates[3] == 1.0,
        format!("detection rates over delta 1,2,4,8: {rates:?}"),
    )
}

fn threshold_consistency(bench: &ExperimentReport) -> Outcome {
    let mut rng = rng_from_seed(derive_seed(SEED, &[7]));
    let (mut checked, mut worst) = (0, 0.0f64);
    for _ in 0..100 {
        let g = random_group(&mut rng);
        let m = rng.gen_range(10..300);
        let h = critical_value(m, 0.05).unwrap().h_alpha;
        let r = delta_threshold_for(&g, h).unwrap();
        if r.delta_thresh > 1.0 {
            checked += 1;
            let f = theoretical_score(&g, r.delta_thresh).unwrap().f_theo;
            worst = worst.max((f - h).abs());
        }
    }
    let delta = 1.5 * bench.mean_delta_thresh;
    let report = run_experiment(&benchmark_config(vec![delta])).unwrap();
    let rate = report.rows[0].detection_rate;
    outcome(
        worst <= 1e-6 && checked > 0 && rate >= 0.9,
        format!(
            "{checked} groups with delta_thresh > 1, max |F_theo - h| {worst:.2e}; detection at delta {delta:.3}: {rate:.2}"
        ),
    )
}

fn misspecification() -> Outcome {
    let run = |interactions: Vec<(String, String)>| {
        let mut config = benchmark_config(vec![6.0]);
        config.classifier = biasprop::classifiers::ClassifierConfig::Logistic {
            interactions,
            params: Default::default(),
        };
        config.target.insert("race".into(), vec!["Caucasian".into()]);
        run_experiment(&config).unwrap().rows[0].mean_overlap
    };
    let without = run(Vec::new());
    let with = run(vec![("sex".into(), "race".into())]);
    outcome(
        with - without >= 0.2,
        format!("mean overlap with interaction {with:.3}, without {without:.3}"),
    )
}

/// Records by value name, independent of vocabulary order.
fn named(d: &Dataset) -> Vec<(BTreeMap<String, String>, bool, Option<f64>)> {
    d.records
        .iter()
        .map(|r| (d.schema.describe_profile(&r.values), r.y, r.p))
        .collect()
}

fn round_trips() -> Outcome {
    let mut rng = rng_from_seed(derive_seed(SEED, &[9]));
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for _ in 0..100_000 {
        let p = rng.gen_range(0.01..0.99);
        let delta = rng.gen_range(1.0..10.0);
        let back = estimate_delta(biased_conditional(p, delta).unwrap(), p).unwrap();
        worst = worst.max((back - delta).abs() / delta);
        worst_abs = worst_abs.max((back - delta).abs());
    }
    let mut csv_ok = true;
    for (i, n) in [1usize, 17, 2_000].into_iter().enumerate() {
        let d = synth_generate(&GeneratorSpec::compas_like(n, derive_seed(SEED, &[90, i as u64]))).unwrap();
        let text = to_csv_string(&d).unwrap();
        let back = read_csv(text.as_bytes(), &ColumnRoles::default()).unwrap();
        csv_ok &= to_csv_string(&back).unwrap() == text && named(&back) == named(&d);
    }
    outcome(
        worst <= 1e-12 && csv_ok,
        format!(
            "max delta round-trip error {worst:.2e} relative ({worst_abs:.2e} absolute); csv byte-exact: {csv_ok}"
        ),
    )
}

fn determinism() -> Outcome {
    let mut differing = Vec::new();
    for args in common::cli::SUBCOMMANDS {
        let runs = common::cli::outputs(args, &[1, 1, 4]);
        if runs[0] != runs[1] || runs[0] != runs[2] {
            differing.push(args[0]);
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} invocations, 1/1/4 workers; differing: {differing:?}",
            common::cli::SUBCOMMANDS.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() {
    let bench_start = Instant::now();
    let bench = run_experiment(&benchmark_config(vec![1.0, 2.0, 4.0, 6.0, 8.0]));
    let bench_time = bench_start.elapsed();

    let with_bench = |f: &dyn Fn(&ExperimentReport) -> Outcome| match &bench {
        Ok(b) => guarded(|| f(b)),
        Err(e) => outcome(false, format!("benchmark failed: {e}")),
    };

    let results = [
        ("1 threshold constants", guarded(constants)),
        ("2 propagation identity", guarded(propagation_identity)),
        ("3 scan optimality", guarded(scan_optimality)),
        ("4 convergence to theory", with_bench(&|b| convergence(b, bench_time))),
        ("5 null calibration", guarded(null_calibration)),
        ("6 power curve", with_bench(&power_curve)),
        ("7 delta_thresh consistency", with_bench(&threshold_consistency)),
        ("8 misspecification", guarded(misspecification)),
        ("9 round-trip laws", guarded(round_trips)),
        ("10 determinism", guarded(determinism)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
