use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn predmodel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predmodel")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = predmodel(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_bench_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-bench", "--kind", "clustering", "--K", "4", "--n", "512", "--seed", "0", "--out", s(out)]);
    }
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    assert!(fa.iter().any(|(n, _)| n == "corpus.jsonl"));
    assert_eq!(fa, fb);
}

#[test]
fn timeseries_bench_has_time_indexed_samples() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-bench", "--kind", "timeseries", "--mode", "all", "--T", "256", "--seed", "1", "--out", s(dir.path())]);
    let corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    let mut ts: Vec<u64> = corpus.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["t"].as_u64().unwrap()).collect();
    ts.sort_unstable();
    assert_eq!(ts, (1..=256).collect::<Vec<_>>());
    assert!(dir.path().join("embeddings.jsonl").exists());
    assert!(dir.path().join("references.jsonl").exists());
}

#[test]
fn invalid_mode_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = predmodel(&["gen-bench", "--kind", "timeseries", "--mode", "weekly", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("weekly"));
    assert!(!predmodel(&["fit", "--K"]).status.success());
}

#[test]
fn fit_eval_and_ttest_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    ok(&["gen-bench", "--kind", "clustering", "--K", "4", "--n", "256", "--seed", "0", "--out", s(&bench)]);
    let corpus = bench.join("corpus.jsonl");
    let full = dir.path().join("full");
    let refine0 = dir.path().join("s0");
    let norefine = dir.path().join("norefine");
    let common = ["--model", "clustering", "--K", "4", "--backend", "oracle", "--corpus", s(&corpus)];

    let mut args = vec!["fit", "--seeds", "0..4", "--S", "3", "--out", s(&full)];
    args.extend(common);
    ok(&args);
    let fits = (0..5).filter(|i| full.join(format!("fit_seed{i}.json")).exists()).count();
    assert_eq!(fits, 5);
    assert!(full.join("config.toml").exists());
    assert!(full.join("fitness_seed0.csv").exists());

    let mut args = vec!["fit", "--seeds", "2", "--S", "0", "--out", s(&refine0)];
    args.extend(common);
    ok(&args);
    let mut args = vec!["fit", "--seeds", "2", "--ablation", "no_refine", "--out", s(&norefine)];
    args.extend(common);
    ok(&args);
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(p.join("fit_seed2.json")).unwrap()).unwrap();
        v["provenance"]["config"] = Value::Null;
        v
    };
    assert_eq!(strip(&refine0), strip(&norefine));

    ok(&["eval", "--run", s(&full)]);
    let csv = fs::read_to_string(full.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    let agg: Value = serde_json::from_str(&fs::read_to_string(full.join("eval.json")).unwrap()).unwrap();
    assert_eq!(agg["per_seed"].as_array().unwrap().len(), 5);

    ok(&["eval", "--run", s(&refine0)]);
    let out = ok(&["ttest", "--a", s(&full.join("eval.json")), "--b", s(&full.join("eval.json"))]);
    assert!(out.contains("\"t\""));
}

#[test]
fn references_as_learned_predicates_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    ok(&["gen-bench", "--kind", "clustering", "--K", "4", "--n", "128", "--seed", "3", "--out", s(&bench)]);
    let run = dir.path().join("run");
    ok(&["fit", "--model", "clustering", "--S", "0", "--seeds", "3", "--corpus", s(&bench.join("corpus.jsonl")), "--out", s(&run)]);

    let path = run.join("fit_seed3.json");
    let mut fit: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let refs: Vec<Value> = fs::read_to_string(bench.join("references.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let r: Value = serde_json::from_str(l).unwrap();
            serde_json::json!({ "text": r["predicate"], "rule": r["rule"] })
        })
        .collect();
    fit["predicates"] = Value::Array(refs);
    fs::write(&path, serde_json::to_string(&fit).unwrap()).unwrap();

    ok(&["eval", "--run", s(&run)]);
    let agg: Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(agg["mean_f1"].as_f64().unwrap(), 1.0);
}

#[test]
fn timeseries_report_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    ok(&["gen-bench", "--kind", "timeseries", "--mode", "topic", "--T", "64", "--seed", "0", "--out", s(&bench)]);
    let run = dir.path().join("run");
    ok(&["fit", "--model", "timeseries", "--K", "2", "--S", "1", "--corpus", s(&bench.join("corpus.jsonl")), "--out", s(&run)]);
    ok(&["report-ts", "--run", s(&run), "--runs", "20"]);
    let csv = fs::read_to_string(run.join("curves_seed0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("predicate,k,t,f,low,high"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 64);
    for k in 0..2 {
        assert_eq!(rows.iter().filter(|r| r.contains(&format!("\",{k},"))).count(), 64);
    }
}

#[test]
fn taxonomize_writes_tree() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    ok(&["gen-bench", "--kind", "hierarchy", "--n", "256", "--seed", "0", "--out", s(&bench)]);
    let out = dir.path().join("tax");
    ok(&["taxonomize", "--K", "4", "--S", "2", "--depth", "1", "--corpus", s(&bench.join("corpus.jsonl")), "--out", s(&out)]);
    let tree: Value = serde_json::from_str(&fs::read_to_string(out.join("taxonomy.json")).unwrap()).unwrap();
    let children = tree["children"].as_array().unwrap();
    assert_eq!(children.len(), 4);
    assert!(children.iter().all(|c| c["children"].as_array().unwrap().is_empty()));
    assert!(fs::read_to_string(out.join("taxonomy.md")).unwrap().starts_with("- all samples (256)"));
}
