mod common;

use std::fs;
use std::path::Path;

use common::{fixtures, run_cli};
use influence_kit::matrix::LabeledMatrix;
use influence_kit::metric::{ablated_matrix, DatasetSummary, Factor};
use serde_json::Value;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summarize_world(out: &Path, extra: &[&str]) {
    let manifest = fixtures().join("world/manifest.json");
    let mut args = vec!["summarize", "--manifest", s(&manifest), "--out", s(out)];
    args.extend_from_slice(extra);
    let (code, _, err) = run_cli(&args);
    assert_eq!(code, 0, "{err}");
}

fn error_report(stderr: &str) -> Value {
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not a JSON report ({e}): {stderr}"))
}

fn write_csv(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn summaries_share_a_fingerprint_and_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    summarize_world(&a, &[]);
    summarize_world(&b, &[]);
    let mut fingerprints = Vec::new();
    for id in ["d00", "d01", "d02", "d03"] {
        let name = format!("{id}.summary.json");
        let text = fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(text, fs::read_to_string(b.join(&name)).unwrap());
        let summary = DatasetSummary::from_json_str(&text).unwrap();
        fingerprints.push(summary.config_fingerprint);
    }
    fingerprints.dedup();
    assert_eq!(fingerprints, ["v1;k=10;seed=42;policy=question"]);
}

#[test]
fn corrupt_record_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("corrupt/manifest.json");
    let (code, _, err) = run_cli(&["summarize", "--manifest", s(&manifest), "--out", s(dir.path())]);
    assert_eq!(code, 1);
    let report = error_report(&err);
    assert_eq!(report["error"], "DimensionMismatch");
    assert!(report["file"].as_str().unwrap().ends_with("bad.jsonl"));
    assert_eq!(report["line"], 2);

    let (code, out, _) = run_cli(&["validate", "--manifest", s(&manifest)]);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["errors"][0]["dataset_id"], "bad");
    let (code, _, _) = run_cli(&["validate", "--manifest", s(&fixtures().join("world/manifest.json"))]);
    assert_eq!(code, 0);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let (code, _, err) = run_cli(&["validate", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "FileNotFound");
}

#[test]
fn score_csv_matches_json_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let sums = dir.path().join("sums");
    summarize_world(&sums, &[]);
    let out = dir.path().join("score");
    let (code, _, err) = run_cli(&["score", "--summaries", s(&sums), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let csv = LabeledMatrix::from_csv_str(&fs::read_to_string(out.join("matrix.csv")).unwrap()).unwrap();
    assert_eq!(csv.values().len() * csv.targets().len(), 16);
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("matrix.json")).unwrap()).unwrap();
    let json_values: Vec<Vec<f64>> = serde_json::from_value(json["values"].clone()).unwrap();
    assert_eq!(csv.values(), json_values.as_slice());
    assert_eq!(json["config_fingerprint"], "v1;k=10;seed=42;policy=question");

    let ablated = dir.path().join("ablated");
    let (code, _, _) = run_cli(&["score", "--summaries", s(&sums), "--drop", "ppl", "--out", s(&ablated)]);
    assert_eq!(code, 0);
    let got = LabeledMatrix::from_csv_str(&fs::read_to_string(ablated.join("matrix.csv")).unwrap()).unwrap();
    let summaries: Vec<DatasetSummary> = ["d00", "d01", "d02", "d03"]
        .iter()
        .map(|id| {
            DatasetSummary::from_json_str(&fs::read_to_string(sums.join(format!("{id}.summary.json"))).unwrap())
                .unwrap()
        })
        .collect();
    let ids = csv.sources().to_vec();
    let want = ablated_matrix(&summaries, &ids, &ids, &[Factor::Ppl])
        .unwrap()
        .rounded(9);
    assert_eq!(got, want);
}

#[test]
fn score_refuses_mixed_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    summarize_world(&a, &[]);
    summarize_world(&b, &["--seed", "7"]);
    fs::copy(b.join("d03.summary.json"), a.join("d03.summary.json")).unwrap();
    let (code, _, err) = run_cli(&["score", "--summaries", s(&a), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "FingerprintMismatch");
}

const OBSERVED: &str = "source,a,b,c\na,0.30,0.10,0.05\nb,0.02,0.25,0.12\nc,0.04,0.08,0.20\n";
const PREDICTED: &str = "source,a,b,c\na,0.9,0.2,0.1\nb,0.3,0.8,0.05\nc,0.1,0.4,0.7\n";

#[test]
fn eval_tau_reports_and_prints() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_csv(dir.path(), "obs.csv", OBSERVED);
    let pred = write_csv(dir.path(), "pred.csv", PREDICTED);
    let out = dir.path().join("tau");

    let (code, stdout, _) = run_cli(&["eval-tau", "--predicted", &obs, "--observed", &obs, "--out", s(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("tau 1.000"), "{stdout}");

    // Pair counts by hand. With the diagonal: every column has one
    // discordant pair of three; rows a and c agree fully, row b has one
    // discordant pair. Without it each ranking has two entries.
    let (code, stdout, _) = run_cli(&[
        "eval-tau",
        "--predicted",
        &pred,
        "--observed",
        &obs,
        "--include-diagonal",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("tau_report.json")).unwrap()).unwrap();
    for id in ["a", "b", "c"] {
        assert!((r["per_target"][id].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(r["per_source"]["a"], 1.0);
    assert!((r["per_source"]["b"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(r["per_source"]["c"], 1.0);
    assert!(
        stdout.contains("tau_target 0.333") && stdout.contains("tau_source 0.778"),
        "{stdout}"
    );

    let (code, _, _) = run_cli(&["eval-tau", "--predicted", &pred, "--observed", &obs, "--out", s(&out)]);
    assert_eq!(code, 0);
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("tau_report.json")).unwrap()).unwrap();
    for id in ["a", "b", "c"] {
        assert_eq!(r["per_target"][id], -1.0);
    }
    assert_eq!(r["per_source"]["b"], -1.0);
    assert_eq!(r["exclude_diagonal"], true);
}

#[test]
fn eval_tau_names_mismatched_id() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write_csv(dir.path(), "obs.csv", OBSERVED);
    let pred = write_csv(dir.path(), "pred.csv", &PREDICTED.replace("c,0.1", "zz,0.1"));
    let (code, _, err) = run_cli(&[
        "eval-tau",
        "--predicted",
        &pred,
        "--observed",
        &obs,
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code, 1);
    let report = error_report(&err);
    assert_eq!(report["error"], "IdMismatch");
    assert!(report["message"].as_str().unwrap().contains("zz"));
}

fn small_world(dir: &Path, n: usize) -> String {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        format!(r#"{{"n_datasets": {n}, "records_per_dataset": 5, "embedding_dim": 4, "noise": 0.0, "seed": 1}}"#),
    )
    .unwrap();
    let out = dir.join("world");
    let (code, _, err) = run_cli(&["fixtures", "generate", "--spec", s(&spec), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let manifest = out.join("manifest.json");
    assert_eq!(run_cli(&["validate", "--manifest", s(&manifest)]).0, 0);
    manifest.to_str().unwrap().to_string()
}

fn plan(dir: &Path, args: &[&str]) -> (i32, Value, String) {
    let out = dir.join("plan");
    let mut all = vec!["reweight", "--out", s(&out)];
    all.extend_from_slice(args);
    let (code, _, err) = run_cli(&all);
    let v = fs::read_to_string(out.join("plan.json"))
        .map(|t| serde_json::from_str(&t).unwrap())
        .unwrap_or(Value::Null);
    let _ = fs::remove_dir_all(&out);
    (code, v, err)
}

#[test]
fn reweight_uniform_budget_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_world(dir.path(), 14);
    let ids: Vec<String> = (0..14).map(|d| format!("d{d:02}")).collect();
    let mut body = format!("source,{}\n", ids.join(","));
    for id in &ids {
        body += &format!("{id}{}\n", ",0.5".repeat(14));
    }
    let matrix = write_csv(dir.path(), "m.csv", &body);
    let (code, v, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &matrix,
            "--target",
            "d03",
            "--budget",
            "280000",
            "--manifest",
            &manifest,
            "--allow-replacement",
        ],
    );
    assert_eq!(code, 0, "{err}");
    for id in &ids {
        assert_eq!(v["per_source"][id], 20000);
        assert_eq!(v["sampled_ids"][id].as_array().unwrap().len(), 20000);
    }

    let (code, _, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &matrix,
            "--target",
            "d03",
            "--budget",
            "280000",
            "--manifest",
            &manifest,
        ],
    );
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "InsufficientPool");

    let (code, _, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &matrix,
            "--target",
            "nope",
            "--budget",
            "3",
            "--manifest",
            &manifest,
        ],
    );
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "UnknownDatasetId");

    let zeros = write_csv(dir.path(), "z.csv", "source,t\nd00,0\nd01,-1\n");
    let (code, _, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &zeros,
            "--target",
            "t",
            "--budget",
            "3",
            "--manifest",
            &manifest,
        ],
    );
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "AllScoresNonPositive");
    let (code, _, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &zeros,
            "--target",
            "t",
            "--budget",
            "3",
            "--manifest",
            &manifest,
            "--no-floor",
        ],
    );
    assert_eq!(code, 1);
    assert_eq!(error_report(&err)["error"], "InvalidScore");
}

#[test]
fn reweight_budget_one_goes_to_largest_remainder() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_world(dir.path(), 3);
    // Quotas 1/4.5, 2/4.5 and 1.5/4.5 of one unit; none reaches 1.
    let matrix = write_csv(dir.path(), "m.csv", "source,t\nd00,1\nd01,2\nd02,1.5\n");
    let (code, v, err) = plan(
        dir.path(),
        &[
            "--matrix",
            &matrix,
            "--target",
            "t",
            "--budget",
            "1",
            "--manifest",
            &manifest,
        ],
    );
    assert_eq!(code, 0, "{err}");
    assert_eq!(v["per_source"], serde_json::json!({"d00": 0, "d01": 1, "d02": 0}));
    assert_eq!(v["sampled_ids"]["d01"].as_array().unwrap().len(), 1);
}

#[test]
fn select_modes() {
    let dir = tempfile::tempdir().unwrap();
    let sums = dir.path().join("sums");
    summarize_world(&sums, &[]);
    let target = sums.join("d00.summary.json");
    let pool = fixtures().join("pool.jsonl");
    let out = dir.path().join("sel");
    let base = [
        "select",
        "--pool",
        s(&pool),
        "--target-summary",
        s(&target),
        "--out",
        s(&out),
    ];

    let (code, stdout, _) = run_cli(&[&base[..], &["--top-k", "10"]].concat());
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("selected.json")).unwrap()).unwrap();
    let scores: Vec<f64> = v["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["score"].as_f64().unwrap())
        .collect();
    assert_eq!(scores.len(), 10);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(
        fs::read_to_string(out.join("selected.jsonl")).unwrap().lines().count(),
        10
    );
    assert!(stdout.contains("gen-"), "{stdout}");

    let (code, _, err) = run_cli(&[&base[..], &["--threshold", "1e9"]].concat());
    assert_eq!(code, 0);
    assert!(err.contains("warning"), "{err}");
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("selected.json")).unwrap()).unwrap();
    assert!(v["items"].as_array().unwrap().is_empty());

    assert_eq!(
        run_cli(&[&base[..], &["--top-k", "3", "--threshold", "0.1"]].concat()).0,
        2
    );
    assert_eq!(run_cli(&base).0, 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run_cli(&[]).0, 2);
    assert_eq!(
        run_cli(&["score", "--summaries", "x", "--out", "y", "--drop", "bogus"]).0,
        2
    );
    assert_eq!(
        run_cli(&["summarize", "--manifest", "m", "--out", "o", "--field-policy", "image"]).0,
        2
    );
    assert_eq!(run_cli(&["--help"]).0, 0);
}
