//! Behavior of the `fairrank` binary: exit codes, report schemas,
//! determinism, and config precedence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fairrank")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("FAIRRANK_LOG", "warn")
        .output()
        .expect("binary should spawn")
}

fn data_file(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
        .display()
        .to_string()
}

fn synth_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "synth",
        "--out",
        out,
        "--num-queries",
        "80",
        "--docs-min",
        "3",
        "--docs-max",
        "7",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn synth_writes_parseable_and_deterministic_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &synth_args("a.jsonl", &[]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let c = fairrank::dataset::parse_jsonl(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(c.len(), 80);

    let out = run_in(dir.path(), &synth_args("b.jsonl", &[]));
    assert!(out.status.success());
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b, "same seed must produce identical datasets");
}

#[test]
fn convert_matches_direct_svmlight_parse() {
    let dir = tempfile::tempdir().unwrap();
    let features = data_file("toy_letor.features.txt");
    let scores = data_file("toy_letor.scores.txt");
    let out = run_in(
        dir.path(),
        &[
            "convert",
            "--input",
            &features,
            "--scores",
            &scores,
            "--out",
            "toy.jsonl",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let converted = fairrank::dataset::parse_jsonl(dir.path().join("toy.jsonl")).unwrap();
    let direct = fairrank::dataset::parse_svmlight(&features, &scores).unwrap();
    assert_eq!(converted.queries, direct.queries);
}

#[test]
fn calibrate_emits_the_documented_json_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    let out = run_in(
        dir.path(),
        &[
            "calibrate",
            "--input",
            "d.jsonl",
            "--alpha",
            "0.5",
            "--delta",
            "0.2",
            "--bound",
            "hb",
            "--grid-points",
            "21",
            "--mc-samples",
            "50",
            "--seed",
            "3",
            "--out",
            "cal.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cal.json")).unwrap())
            .unwrap();
    assert!(v["outcome"] == "selected" || v["outcome"] == "abstain");
    for key in ["alpha", "delta", "bound", "certified", "grid"] {
        assert!(!v[key].is_null(), "missing key {key}");
    }
    let row = &v["grid"][0];
    for key in [
        "lambda",
        "r_hat",
        "r_tilde",
        "p_or_ucb",
        "disparity",
        "dkwm_p_bound",
    ] {
        assert!(!row[key].is_null(), "missing grid column {key}");
    }

    // The calibration JSON feeds evaluate --calibration.
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--input",
            "d.jsonl",
            "--calibration",
            "cal.json",
            "--mc-samples",
            "50",
            "--seed",
            "3",
            "--out",
            "eval.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap())
            .unwrap();
    for key in [
        "mean_ndcg",
        "mean_risk",
        "mean_disparity",
        "per_query",
        "lambda",
    ] {
        assert!(!v[key].is_null(), "missing key {key}");
    }
}

#[test]
fn evaluate_csv_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--input",
            "d.jsonl",
            "--lambda",
            "0.1",
            "--mc-samples",
            "30",
            "--seed",
            "3",
            "--out",
            "eval.csv",
            "--out-format",
            "csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "qid,ndcg,risk,disparity");
    assert_eq!(text.lines().count(), 81, "header plus one row per query");
}

fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("generated_at"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reports_are_byte_identical_modulo_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    let sweep = |out: &str| {
        let status = run_in(
            dir.path(),
            &[
                "sweep",
                "--input",
                "d.jsonl",
                "--grid-points",
                "11",
                "--mc-samples",
                "40",
                "--seed",
                "12",
                "--out",
                out,
            ],
        )
        .status;
        assert!(status.success());
    };
    sweep("s1.json");
    sweep("s2.json");
    let a = std::fs::read_to_string(dir.path().join("s1.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("s2.json")).unwrap();
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));

    // Different seeds genuinely change the report once queries are large
    // enough to force the Monte Carlo estimator (n > 8 disables exact
    // enumeration).
    let status = run_in(
        dir.path(),
        &[
            "synth",
            "--out",
            "large.jsonl",
            "--num-queries",
            "80",
            "--docs-min",
            "9",
            "--docs-max",
            "12",
            "--seed",
            "5",
        ],
    )
    .status;
    assert!(status.success());
    let sweep_large = |seed: &str, out: &str| {
        let status = run_in(
            dir.path(),
            &[
                "sweep",
                "--input",
                "large.jsonl",
                "--grid-points",
                "11",
                "--mc-samples",
                "40",
                "--seed",
                seed,
                "--out",
                out,
            ],
        )
        .status;
        assert!(status.success());
    };
    sweep_large("12", "L1.json");
    sweep_large("13", "L2.json");
    let a = std::fs::read_to_string(dir.path().join("L1.json")).unwrap();
    let c = std::fs::read_to_string(dir.path().join("L2.json")).unwrap();
    assert_ne!(strip_timestamp(&a), strip_timestamp(&c));
}

#[test]
fn coverage_succeeds_and_reports_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    let out = run_in(
        dir.path(),
        &[
            "coverage",
            "--input",
            "d.jsonl",
            "--alpha-rel",
            "0.85",
            "--delta",
            "0.2",
            "--trials",
            "4",
            "--cal-fraction",
            "0.4",
            "--grid-points",
            "11",
            "--mc-samples",
            "40",
            "--bound",
            "hb",
            "--seed",
            "2",
            "--out",
            "cov.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cov.json")).unwrap())
            .unwrap();
    assert_eq!(v["trials"], 4);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["per_trial"].as_array().unwrap().len(), 4);
    for key in [
        "coverage_rate_all_trials",
        "abstentions",
        "alpha_mode",
        "bound",
    ] {
        assert!(!v[key].is_null(), "missing key {key}");
    }
}

#[test]
fn coverage_exits_two_when_every_trial_abstains() {
    let dir = tempfile::tempdir().unwrap();
    // Pure-noise scores and an absurdly strict target.
    let status = run_in(
        dir.path(),
        &synth_args(
            "noise.jsonl",
            &["--noise-sigma", "40", "--tie-cluster-prob", "0"],
        ),
    )
    .status;
    assert!(status.success());
    let out = run_in(
        dir.path(),
        &[
            "coverage",
            "--input",
            "noise.jsonl",
            "--alpha",
            "0.001",
            "--trials",
            "3",
            "--grid-points",
            "7",
            "--mc-samples",
            "30",
            "--seed",
            "2",
            "--out",
            "cov.json",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cov.json")).unwrap())
            .unwrap();
    assert_eq!(v["abstentions"], 3);
    assert!(v["coverage_rate"].is_null());
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["coverage", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("Usage"),
        "stderr should carry usage text: {stderr}"
    );
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["evaluate", "--lambda", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--input"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    std::fs::write(
        dir.path().join("run.toml"),
        "input = \"d.jsonl\"\nalpha = 0.5\ntrials = 2\ngrid-points = 7\nmc-samples = 30\nseed = 4\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "coverage", "--config", "run.toml", "--alpha", "0.25", "--out", "cov.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cov.json")).unwrap())
            .unwrap();
    assert_eq!(v["alpha_mode"]["absolute"], 0.25, "flag must beat the file");
    assert_eq!(v["trials"], 2, "file value applies where no flag is given");
}

#[test]
fn resolved_config_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &synth_args("d.jsonl", &[]))
        .status
        .success());
    let out = Command::new(bin())
        .args([
            "evaluate",
            "--input",
            "d.jsonl",
            "--lambda",
            "0.2",
            "--mc-samples",
            "20",
            "--seed",
            "6",
            "--out",
            "e.json",
        ])
        .current_dir(dir.path())
        .env("FAIRRANK_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("resolved config"), "stderr: {stderr}");
    assert!(
        stderr.contains("\"seed\":6"),
        "config must include the seed: {stderr}"
    );
}
