//! Drives the `triage` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn triage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(args)
        .env("TRIAGE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = triage(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32, category: &str) -> String {
    let out = triage(args);
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {stderr}");
    assert!(stderr.contains(&format!("error[{category}]")), "{args:?}: {stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic dataset written by `synth`.
fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["synth", "--out", s(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

fn small(dir: &Path) -> PathBuf {
    synth(
        dir,
        "small.csv",
        &["--dim", "4", "--positive", "20", "--negative", "14", "--separation", "3", "--missing-rate", "0.05", "--seed", "9"],
    )
}

#[test]
fn synth_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(dir.path());
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 35);
    assert_eq!(text.lines().next().unwrap(), "f0,f1,f2,f3,label");
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("small.csv.schema.json")).unwrap()).unwrap();
    assert_eq!(sidecar["label_column"], "label");
}

#[test]
fn preprocess_reports_drops() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    std::fs::write(
        &path,
        "a,b,c,d,e,label\n1,,1,1,1,pos\n2,,2,2,2,pos\n3,3,3,3,3,pos\n4,4,,,4,pos\n5,5,5,5,5,neg\n6,6,6,6,6,neg\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("raw.csv.schema.json"),
        r#"{"schema":{"features":[{"id":0,"name":"a","unit":""},{"id":1,"name":"b","unit":""},{"id":2,"name":"c","unit":""},{"id":3,"name":"d","unit":""},{"id":4,"name":"e","unit":""}],"has_age_gender":false},"label_column":"label","class_names":{"positive":"pos","negative":"neg"}}"#,
    )
    .unwrap();
    let out = dir.path().join("clean.csv");
    let stdout = ok(&["preprocess", "--data", s(&path), "--out", s(&out)]);
    // b is missing on 2 of 4 positives; row 3 then misses 2 of 4 features
    assert!(stdout.contains("dropped feature 1 b"), "{stdout}");
    assert!(stdout.contains("dropped subject 3"), "{stdout}");
    let clean = std::fs::read_to_string(&out).unwrap();
    assert_eq!(clean.lines().next().unwrap(), "a,c,d,e,label");
    assert_eq!(clean.lines().count(), 6);
}

#[test]
fn cv_rbf_on_separated_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "sep.csv",
        &["--dim", "5", "--positive", "30", "--negative", "24", "--separation", "3", "--missing-rate", "0.1", "--seed", "2"],
    );
    let trace = dir.path().join("trace.jsonl");
    let stdout = ok(&["cv", "--data", s(&data), "--family", "svm-rbf", "--trace", s(&trace)]);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "family\tconfiguration\tbalanced_accuracy\tsensitivity\tspecificity\tprecision"
    );
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(row[0], "svm-rbf");
    let balanced: f64 = row[2].parse().unwrap();
    assert!(balanced >= 95.0, "{stdout}");
    let trace = std::fs::read_to_string(trace).unwrap();
    assert_eq!(trace.lines().count(), 441 + 400);
}

#[test]
fn cv_with_a_narrow_range_and_no_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(dir.path());
    let trace = dir.path().join("trace.jsonl");
    let folds = dir.path().join("folds.jsonl");
    ok(&[
        "cv", "--data", s(&data), "--family", "svm-linear", "--exp-range", "-2:2", "--coarse-only",
        "--trace", s(&trace), "--folds", s(&folds),
    ]);
    assert_eq!(std::fs::read_to_string(trace).unwrap().lines().count(), 5);
    assert_eq!(std::fs::read_to_string(folds).unwrap().lines().count(), 34);
}

#[test]
fn train_predict_importance() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(dir.path());
    let bundle = dir.path().join("model.json");
    ok(&[
        "train", "--data", s(&data), "--family", "svm-linear", "--c", "1", "--timestamp", "1600000000",
        "--out", s(&bundle),
    ]);
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&bundle).unwrap()).unwrap();
    assert_eq!(json["metadata"]["trained_at"], 1_600_000_000);
    assert_eq!(json["format_version"], 1);

    let preds = dir.path().join("preds.csv");
    ok(&["predict", "--bundle", s(&bundle), "--input", s(&data), "--out", s(&preds)]);
    let text = std::fs::read_to_string(preds).unwrap();
    let truth: Vec<String> = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,label,score"));
    let correct = lines
        .zip(&truth)
        .filter(|(l, t)| l.split(',').nth(1).unwrap() == t.as_str())
        .count();
    assert!(correct >= 32, "{correct} of 34");

    let table = ok(&["importance", "--bundle", s(&bundle)]);
    assert!(table.lines().last().unwrap().starts_with("total\t\t1.000"), "{table}");
    let json = ok(&["importance", "--bundle", s(&bundle), "--format", "json"]);
    let entries: Vec<Value> = json.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 4);
    let sum: f64 = entries.iter().map(|e| e["score"].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-9);
}

#[test]
fn every_family_trains() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(dir.path());
    let out = dir.path().join("m.json");
    for flags in [
        vec!["--family", "svm-rbf", "--c", "2", "--gamma", "0.25"],
        vec!["--family", "tree", "--max-depth", "3"],
        vec!["--family", "forest", "--n-tree", "7", "--max-features", "log2", "--max-depth", "4", "--seed", "5"],
    ] {
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out)];
        args.extend(flags);
        ok(&args);
        ok(&["predict", "--bundle", s(&out), "--input", s(&data)]);
    }
    // forest importance is not defined
    fails(&["importance", "--bundle", s(&out)], 8, "unsupported");
}

#[test]
fn hyperparameters_are_never_defaulted() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(dir.path());
    let out = dir.path().join("m.json");
    let base = ["train", "--data", s(&data), "--out", s(&out)];
    let run = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        fails(&a, 6, "config")
    };
    assert!(run(&["--family", "svm-rbf", "--c", "1"]).contains("--gamma"));
    assert!(run(&["--family", "forest", "--n-tree", "3", "--max-depth", "2", "--seed", "1"]).contains("--max-features"));
    assert!(run(&["--family", "tree", "--max-depth", "2", "--c", "1"]).contains("does not apply"));
    run(&["--family", "svm-linear", "--c=-1"]);
    assert!(!out.exists());
}

#[test]
fn usage_errors_fail_fast() {
    let out = triage(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = triage(&["cv", "--data", "x.csv", "--family", "knn"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(triage(&[]).status.code(), Some(2));
}

#[test]
fn error_categories_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    fails(&["predict", "--bundle", s(&missing), "--input", s(&missing)], 3, "io");

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, "{\"format_version\":1,").unwrap();
    fails(&["importance", "--bundle", s(&truncated)], 9, "bundle-parse");

    let future = dir.path().join("future.json");
    std::fs::write(&future, "{\"format_version\":2}").unwrap();
    fails(&["importance", "--bundle", s(&future)], 9, "bundle-version");

    let data = small(dir.path());
    let bad = dir.path().join("bad.csv");
    let text = std::fs::read_to_string(&data).unwrap().replacen("\n", "\n1,2,3\n", 1);
    std::fs::write(&bad, text).unwrap();
    std::fs::copy(dir.path().join("small.csv.schema.json"), dir.path().join("bad.csv.schema.json")).unwrap();
    fails(&["cv", "--data", s(&bad), "--family", "tree"], 4, "ingestion");

    let one_class = dir.path().join("one.csv");
    std::fs::write(&one_class, "f0,f1,f2,f3,label\n1,2,3,4,covid\n2,3,4,5,covid\n").unwrap();
    std::fs::copy(dir.path().join("small.csv.schema.json"), dir.path().join("one.csv.schema.json")).unwrap();
    fails(&["train", "--data", s(&one_class), "--family", "tree", "--max-depth", "2", "--out", s(&missing)], 5, "data");
}

#[test]
fn predict_matches_the_parity_fixture() {
    let fixture: Value = serde_json::from_str(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/portal_parity.json")).unwrap(),
    )
    .unwrap();
    let tol = fixture["tolerance"].as_f64().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundles = fixture["bundles"].as_array().unwrap();
    for (k, b) in bundles.iter().enumerate() {
        let path = dir.path().join(format!("b{k}.json"));
        std::fs::write(&path, serde_json::to_vec(b).unwrap()).unwrap();
        let names: Vec<&str> = b["schema"]["features"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f["name"].as_str().unwrap())
            .collect();
        let cases: Vec<&Value> = fixture["cases"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|c| c["bundle"].as_u64() == Some(k as u64))
            .collect();
        let mut csv = names.join(",") + "\n";
        for c in &cases {
            let cells: Vec<String> = c["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().map_or_else(String::new, |x| x.to_string()))
                .collect();
            csv += &(cells.join(",") + "\n");
        }
        let input = dir.path().join(format!("in{k}.csv"));
        std::fs::write(&input, csv).unwrap();
        let stdout = ok(&["predict", "--bundle", s(&path), "--input", s(&input)]);
        let positive = b["metadata"]["class_names"]["positive"].as_str().unwrap();
        for (line, c) in stdout.lines().skip(1).zip(&cases) {
            let cols: Vec<&str> = line.split(',').collect();
            let score: f64 = cols[2].parse().unwrap();
            let expected = c["expected_score"].as_f64().unwrap();
            assert!((score - expected).abs() <= tol, "{}: {score} vs {expected}", c["name"]);
            let label = if cols[1] == positive { 1 } else { -1 };
            assert_eq!(c["expected_label"].as_i64(), Some(label), "{}", c["name"]);
        }
    }
}
