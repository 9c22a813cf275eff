#![allow(dead_code)]

use biasprop::scan::ScanData;
use biasprop::tabular::{Attribute, Dataset, ProbSemantics, Record, Schema, Subgroup};
use proptest::prelude::*;

pub fn schema(arities: &[usize]) -> Schema {
    let attributes = arities
        .iter()
        .enumerate()
        .map(|(j, &a)| Attribute {
            name: format!("a{j}"),
            values: (0..a).map(|v| format!("v{v}")).collect(),
        })
        .collect();
    Schema::new(attributes, "y", Some("p".into())).unwrap()
}

/// Small scored dataset: up to 3 attributes of arity up to 3, up to 60 rows.
/// Probabilities are shared within a profile.
pub fn small_dataset() -> impl Strategy<Value = Dataset> {
    (prop::collection::vec(1usize..=3, 1..=3), 1usize..=60)
        .prop_flat_map(|(arities, n)| {
            let profile = arities.iter().map(|&a| 0..a as u32).collect::<Vec<_>>();
            let m: usize = arities.iter().product();
            (
                Just(arities),
                prop::collection::vec((profile, any::<bool>()), n),
                prop::collection::vec(0.02f64..0.98, m),
            )
        })
        .prop_map(|(arities, rows, probs)| {
            let records = rows
                .into_iter()
                .map(|(values, y)| {
                    let mut k = 0;
                    for (v, a) in values.iter().zip(&arities) {
                        k = k * a + *v as usize;
                    }
                    Record::with_p(values, y, probs[k])
                })
                .collect();
            Dataset::new(schema(&arities), records, ProbSemantics::BiasedPred).unwrap()
        })
}

fn nonempty_subsets(arity: usize) -> Vec<Vec<u32>> {
    (1u32..1 << arity)
        .map(|mask| (0..arity as u32).filter(|v| mask & (1 << v) != 0).collect())
        .collect()
}

/// Maximum score over every rectangular subgroup.
pub fn brute_force_max(data: &ScanData) -> f64 {
    let mut combos: Vec<Vec<Vec<u32>>> = vec![Vec::new()];
    for &a in data.arities() {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                nonempty_subsets(a).into_iter().map(move |s| {
                    let mut p = prefix.clone();
                    p.push(s);
                    p
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|sets| data.score(&Subgroup::from_sets(sets)).score)
        .fold(0.0, f64::max)
}

pub mod cli {
    use std::path::Path;
    use std::process::Command;

    pub fn run(dir: &Path, threads: usize, args: &[&str]) -> (i32, String, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_biasprop"))
            .current_dir(dir)
            .arg("--threads")
            .arg(threads.to_string())
            .args(args)
            .output()
            .expect("binary runs");
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stdout).into_owned(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    }

    /// Small fixture files shared by the subcommand runs.
    pub fn fixtures(dir: &Path) {
        let (code, _, err) = run(dir, 1, &["generate", "--n", "3000", "--seed", "7", "--out", "data.csv"]);
        assert_eq!(code, 0, "{err}");
        std::fs::write(
            dir.join("bias.json"),
            r#"{"target": {"sex": ["Female"]}, "delta": 4, "seed": 3}"#,
        )
        .unwrap();
        std::fs::write(
            dir.join("experiment.json"),
            r#"{"data": {"preset": {"name": "compas_like", "n": 3000, "seed": 2}},
                "target": {"sex": ["Female"]}, "deltas": [1, 4], "trials": 3,
                "scan": {"iterations": 5}, "seed": 9}"#,
        )
        .unwrap();
    }

    /// One invocation per subcommand, each writing `out.*`.
    pub const SUBCOMMANDS: &[&[&str]] = &[
        &["generate", "--n", "500", "--seed", "11", "--out", "out.csv"],
        &["scan", "data.csv", "--iterations", "8", "--seed", "5", "--replicas", "3", "--out", "out.json"],
        &["scan", "data.csv", "--iterations", "4", "--seed", "5", "--mode", "exhaustive", "--out", "out.json"],
        &["inject", "data.csv", "--spec", "bias.json", "--out", "out.csv"],
        &["theory", "data.csv", "--target", r#"{"sex": ["Female"]}"#, "--delta", "3", "--out", "out.json"],
        &["thresh", "data.csv", "--alpha", "0.05", "--target", r#"{"race": ["Caucasian"]}"#, "--out", "out.json"],
        &["nullsim", "--n", "2000", "--runs", "4", "--iterations", "3", "--seed", "1", "--out", "out.json"],
        &["experiment", "--config", "experiment.json", "--out", "out.json", "--csv", "out.csv"],
    ];

    /// Runs `args` in fresh copies of the fixtures with the given worker
    /// counts and returns every `out.*` file per run.
    pub fn outputs(args: &[&str], threads: &[usize]) -> Vec<Vec<(String, Vec<u8>)>> {
        threads
            .iter()
            .map(|&t| {
                let dir = tempfile::tempdir().unwrap();
                fixtures(dir.path());
                let (code, _, err) = run(dir.path(), t, args);
                assert_eq!(code, 0, "{args:?}: {err}");
                let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
                    .unwrap()
                    .map(|e| e.unwrap())
                    .filter(|e| e.file_name().to_string_lossy().starts_with("out."))
                    .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
                    .collect();
                files.sort();
                assert!(!files.is_empty(), "{args:?} wrote nothing");
                files
            })
            .collect()
    }
}
