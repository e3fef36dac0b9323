use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use cpnslab::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpnslab"))
}

fn minimal() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/minimal.json")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CPNSLAB_OUT")
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<String>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(str::to_string);
    let header = lines.next().unwrap();
    (header, lines.collect())
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = run(&["run", minimal().to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(started.elapsed().as_secs() < 60);
    let seed = tmp.path().join("minimal/seed-0");
    for f in ["epochs.jsonl", "eval-task0.json", "eval-task1.json", "model-task1.ckpt", "summary.csv"] {
        assert!(seed.join(f).exists(), "missing {f}");
    }
    assert!(!seed.join("eval-task2.json").exists());
    let (header, rows) = csv_rows(&seed.join("summary.csv"));
    assert_eq!(header, "method,scenario,seed,last,avg");
    assert_eq!(rows.len(), 1);
    let epochs = std::fs::read_to_string(seed.join("epochs.jsonl")).unwrap();
    // 10 stage-1 + 10 stage-2 epochs per task
    assert_eq!(epochs.lines().count(), 40);
    for line in epochs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["task", "stage", "epoch", "loss_terms", "cpns_report", "wall_ms"] {
            assert!(v.get(key).is_some(), "epoch record lacks {key}");
        }
    }
}

#[test]
fn seed_flag_and_repeat_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg = minimal();
    assert!(run(&["run", cfg.to_str().unwrap(), "--seed", "3"], &a).status.success());
    assert!(run(&["run", cfg.to_str().unwrap(), "--seed", "3"], &b).status.success());
    let read = |d: &Path| std::fs::read(d.join("minimal/summary.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(a.join("minimal/seed-3").is_dir());
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeds": []}"#).unwrap();
    assert_eq!(run(&["run", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    std::fs::write(
        &bad,
        r#"{"data": {"kind": "table", "train": "/nonexistent.tab", "test": "/nonexistent.tab", "base": 2, "increment": 2}}"#,
    )
    .unwrap();
    assert_eq!(run(&["run", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    std::fs::write(&bad, r#"{"train": {"lambda": -1}}"#).unwrap();
    assert_eq!(run(&["run", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    let out = run(
        &["sweep", minimal().to_str().unwrap(), "--param", "momentum", "--values", "0.1"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep parameter"));

    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn exit_code_mapping() {
    assert_eq!(Error::Invariant("m > r".into()).exit_code(), 3);
    assert_eq!(Error::Config("x".into()).exit_code(), 2);
    assert_eq!(Error::Numerical("nan".into()).exit_code(), 1);
}

#[test]
fn sweep_has_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let values = "0.01,0.03,0.05,0.08,0.15,0.2";
    let out = run(
        &["sweep", minimal().to_str().unwrap(), "--param", "beta", "--values", values],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&tmp.path().join("minimal/sweep-beta.csv"));
    assert_eq!(header, "value,last,avg");
    assert_eq!(rows.len(), 6);
}

#[test]
fn single_value_sweep_equals_run() {
    let tmp = tempfile::tempdir().unwrap();
    // the minimal config already uses beta = 0.03
    assert!(run(&["run", minimal().to_str().unwrap()], tmp.path()).status.success());
    assert!(run(
        &["sweep", minimal().to_str().unwrap(), "--param", "beta", "--values", "0.03"],
        tmp.path()
    )
    .status
    .success());
    let (_, run_rows) = csv_rows(&tmp.path().join("minimal/summary.csv"));
    let (_, sweep_rows) = csv_rows(&tmp.path().join("minimal/sweep-beta.csv"));
    let r: Vec<&str> = run_rows[0].split(',').collect();
    let s: Vec<&str> = sweep_rows[0].split(',').collect();
    assert_eq!(&r[3..], &s[1..]);
}

#[test]
fn ablation_table_has_six_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["ablate", minimal().to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&tmp.path().join("minimal/ablation.csv"));
    assert_eq!(header, "method,intra,inter,two_stage,last,avg");
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("baseline,false,false,false"));
    assert!(rows[5].starts_with("full,true,true,true"));
}

#[test]
fn eval_scores_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["run", minimal().to_str().unwrap()], tmp.path()).status.success());
    let ckpt = tmp.path().join("minimal/seed-0/model-task1.ckpt");
    let stream = cpnslab::experiment::ExperimentConfig::load(minimal())
        .unwrap()
        .build_stream(0)
        .unwrap();
    let table = tmp.path().join("test.tab");
    cpnslab::data::save_table(&table, &stream.test_upto(1).unwrap()).unwrap();
    let out = bin().args(["eval"]).arg(&ckpt).arg(&table).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (_, rows) = csv_rows(&tmp.path().join("minimal/summary.csv"));
    let last: f64 = rows[0].split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(v["accuracy"].as_f64().unwrap(), last);
    assert_eq!(v["tasks"], 2);

    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"nope").unwrap();
    let out = bin().arg("eval").arg(&junk).arg(&table).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
