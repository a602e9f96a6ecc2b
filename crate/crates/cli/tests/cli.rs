use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn influxcl(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_influxcl"))
        .args(args)
        .env("INFLUXCL_RUNS_DIR", runs)
        .output()
        .expect("binary runs")
}

/// Runs a command expected to succeed and returns the run directory it printed.
fn ok(runs: &Path, args: &[&str]) -> PathBuf {
    let out = influxcl(runs, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    PathBuf::from(stdout.trim())
}

/// Exit code and the single stderr line of a failing command.
fn err(runs: &Path, args: &[&str]) -> (i32, String) {
    let out = influxcl(runs, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr is not one line: {stderr:?}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(runs: &Path) -> PathBuf {
    ok(
        runs,
        &[
            "gen-data",
            "--task",
            "clusters",
            "--n",
            "200",
            "--n-dev",
            "50",
            "--n-test",
            "100",
            "--classes",
            "3",
            "--dim",
            "4",
            "--noise",
            "0.1",
            "--seed",
            "3",
        ],
    )
}

#[test]
fn gen_data_flips_exactly_the_requested_fraction() {
    let tmp = TempDir::new().unwrap();
    let dir = ok(
        tmp.path(),
        &[
            "gen-data", "--task", "clusters", "--n", "2000", "--noise", "0.1", "--seed", "7",
        ],
    );
    assert!(
        dir.starts_with(tmp.path()),
        "runs root not honoured: {dir:?}"
    );
    let text = std::fs::read_to_string(dir.join("train.jsonl")).unwrap();
    let noisy = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["noisy"] == serde_json::Value::Bool(true))
        .count();
    assert_eq!(text.lines().count(), 2000);
    assert_eq!(noisy, 200);
    assert!(dir.join("COMPLETE").is_file());
}

#[test]
fn score_without_checkpoints_is_missing_input() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path());
    let run = ok(
        tmp.path(),
        &[
            "train",
            "--data",
            s(&data),
            "--steps",
            "20",
            "--checkpoints",
            "0",
        ],
    );
    let (code, line) = err(
        tmp.path(),
        &[
            "score",
            "--run",
            s(&run),
            "--method",
            "abif",
            "--mask",
            "last",
        ],
    );
    assert_eq!(code, 4);
    assert!(
        line.starts_with("error kind=missing-input code=4 "),
        "{line}"
    );
}

#[test]
fn error_classes_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path());
    let (usage, line) = err(tmp.path(), &["train", "--data", s(&data), "--no-such-flag"]);
    assert!(line.contains("kind=usage"), "{line}");
    let (invalid, line) = err(
        tmp.path(),
        &["train", "--data", s(&data), "--activation", "sigmoid"],
    );
    assert!(line.contains("kind=invalid-config"), "{line}");
    let (invalid2, _) = err(
        tmp.path(),
        &["train", "--data", s(&data), "--batch-size", "100000"],
    );
    let (missing, _) = err(tmp.path(), &["train", "--data", "/definitely/not/here"]);
    let args = ["train", "--data", s(&data), "--steps", "10"];
    ok(tmp.path(), &args);
    let (exists, line) = err(tmp.path(), &args);
    assert!(line.contains("kind=run-exists"), "{line}");
    assert_eq!((usage, invalid, invalid2, missing, exists), (2, 3, 3, 4, 5));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(tmp.path(), &forced);
}

#[test]
fn malformed_manifest_is_invalid_config() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("m.json");
    std::fs::write(&manifest, "{ not json").unwrap();
    let (code, _) = err(tmp.path(), &["run", "--manifest", s(&manifest)]);
    assert_eq!(code, 3);
    let (code, _) = err(
        tmp.path(),
        &["run", "--manifest", s(&tmp.path().join("absent.json"))],
    );
    assert_eq!(code, 4);
}

#[test]
fn flags_override_manifest_which_overrides_defaults() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path());
    let manifest = tmp.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"{"train": {"steps": 30, "learning_rate": 0.05}, "seeds": {"init": 11, "order": 12}}"#,
    )
    .unwrap();
    let run = ok(
        tmp.path(),
        &[
            "train",
            "--data",
            s(&data),
            "--manifest",
            s(&manifest),
            "--order-seed",
            "99",
        ],
    );
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    let train = &cfg["train"];
    assert_eq!(train["steps"], 30); // manifest
    assert_eq!(train["learning_rate"], 0.05); // manifest
    assert_eq!(train["init_seed"], 11); // manifest
    assert_eq!(train["order_seed"], 99); // flag
    assert_eq!(train["batch_size"], 32); // default
}

#[test]
fn help_lists_named_seeds_and_defaults() {
    let tmp = TempDir::new().unwrap();
    let out = influxcl(tmp.path(), &["train", "--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--init-seed",
        "--order-seed",
        "--run-dir",
        "--force",
        "--manifest",
    ] {
        assert!(help.contains(flag), "train --help lacks {flag}");
    }
    let help = String::from_utf8(influxcl(tmp.path(), &["score", "--help"]).stdout).unwrap();
    for flag in [
        "--score-seed",
        "--top-k",
        "--iterations",
        "--projection",
        "--mask",
    ] {
        assert!(help.contains(flag), "score --help lacks {flag}");
    }
    let help = String::from_utf8(influxcl(tmp.path(), &["--help"]).stdout).unwrap();
    for cmd in [
        "gen-data",
        "train",
        "score",
        "stability",
        "filter",
        "buckets",
        "autocl",
        "report",
    ] {
        assert!(help.contains(cmd), "--help lacks {cmd}");
    }
}

#[test]
fn pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let r = tmp.path();
    let data = small_data(r);
    let run = ok(
        r,
        &[
            "train",
            "--data",
            s(&data),
            "--steps",
            "100",
            "--hidden",
            "8",
        ],
    );
    assert_eq!(
        std::fs::read_dir(run.join("checkpoints")).unwrap().count(),
        3
    );

    let scores = ok(
        r,
        &[
            "score",
            "--run",
            s(&run),
            "--top-k",
            "5",
            "--iterations",
            "10",
        ],
    );
    let csv = std::fs::read_to_string(scores.join("scores.csv")).unwrap();
    assert!(csv.starts_with("id,score,method,mask,config_hash\n"));
    assert_eq!(csv.lines().count(), 201);
    let tracin = ok(
        r,
        &[
            "score",
            "--run",
            s(&run),
            "--method",
            "tracin",
            "--projection",
            "16",
        ],
    );
    assert!(tracin.join("scores.csv").is_file());

    let scores_csv = scores.join("scores.csv");
    let filtered = ok(
        r,
        &[
            "filter",
            "--data",
            s(&data),
            "--scores",
            s(&scores_csv),
            "--pct",
            "10",
        ],
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(filtered.join("filter.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["dropped_ids"].as_array().unwrap().len(), 20);
    assert_eq!(manifest["kept_ids"].as_array().unwrap().len(), 180);
    // the filtered directory is itself valid training data
    ok(r, &["train", "--data", s(&filtered), "--steps", "20"]);

    let buckets = ok(r, &["buckets", "--scores", s(&scores_csv), "--k", "4"]);
    let bucket_csv = buckets.join("buckets.csv");
    let autocl = ok(
        r,
        &[
            "autocl",
            "--data",
            s(&data),
            "--buckets",
            s(&bucket_csv),
            "--steps",
            "100",
            "--hidden",
            "8",
        ],
    );
    let policy = std::fs::read_to_string(autocl.join("policy.csv")).unwrap();
    assert!(policy.starts_with("step,arm,reward_raw,reward_scaled,p0,p1,p2,p3\n"));
    assert_eq!(policy.lines().count(), 101);

    let report = ok(
        r,
        &[
            "report",
            "--data",
            s(&data),
            "--buckets",
            s(&bucket_csv),
            "--policy",
            s(&autocl.join("policy.csv")),
            "--every",
            "10",
            "--eval",
            s(&run.join("eval.json")),
            "--eval",
            s(&autocl.join("eval.json")),
        ],
    );
    let hist = std::fs::read_to_string(report.join("noise_by_bucket.csv")).unwrap();
    let noisy_total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(noisy_total, 20);
    assert_eq!(
        std::fs::read_to_string(report.join("eval_comparison.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    assert!(report.join("policy_over_time.csv").is_file());

    let stab = ok(
        r,
        &[
            "stability",
            "--data",
            s(&data),
            "--steps",
            "60",
            "--top-k",
            "5",
            "--iterations",
            "10",
        ],
    );
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stab.join("report.json")).unwrap()).unwrap();
    // no variation: both runs are the same run
    assert_eq!(rep["spearman"], 1.0);
    assert_eq!(rep["churn"], 0.0);
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

#[test]
fn run_manifest_is_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let manifest = tmp.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"{
            "task": {"generator": {"kind": "clusters", "classes": 3, "dim": 4, "separation": 4.0},
                     "n_train": 150, "n_dev": 40, "n_test": 80, "noise": 0.2, "seed": 1},
            "model": {"hidden_widths": [6]},
            "train": {"steps": 80, "batch_size": 16},
            "influence": {"top_k": 5, "iterations": 12, "hvp_examples": 64},
            "regimes": [
                {"regime": "baseline"},
                {"regime": "filter", "pct": 20.0},
                {"regime": "autocl", "buckets": 3, "bandit": {"eta": 0.1, "reward": "cosine"}},
                {"regime": "bucket_sweep", "buckets": 3}
            ],
            "seeds": {"init": 1, "order": 2, "score": 3}
        }"#,
    )
    .unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(
        tmp.path(),
        &["run", "--manifest", s(&manifest), "--run-dir", s(&a)],
    );
    ok(
        tmp.path(),
        &["run", "--manifest", s(&manifest), "--run-dir", s(&b)],
    );
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.contains_key(Path::new("summary.json")));
    assert!(ta.contains_key(Path::new("regimes/bucket_sweep_k3/bucket_sweep.csv")));
    assert!(ta.contains_key(Path::new("regimes/autocl_k3_exp3s_cosine/policy.csv")));
    assert_eq!(ta, tb);

    let (code, _) = err(
        tmp.path(),
        &["run", "--manifest", s(&manifest), "--run-dir", s(&a)],
    );
    assert_eq!(code, 5);
    ok(
        tmp.path(),
        &[
            "run",
            "--manifest",
            s(&manifest),
            "--run-dir",
            s(&a),
            "--force",
        ],
    );
    assert_eq!(read_tree(&a), tb);
}
