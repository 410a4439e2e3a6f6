use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hytransformer::store::{
    write_dataset, DatasetFormat, KnowledgeGraph, Split, Statement, Vocabulary,
};
use hytransformer::training::LogRecord;
use serde_json::Value;

fn hyt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyt"))
        .args(args)
        .env_remove("HYT_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn toy_graph(n: usize, seed: usize) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new(Vocabulary::numbered("e", n), Vocabulary::numbered("r", 3));
    for i in 0..40 {
        let mut s = Statement::triple((i * 7 + seed) % n, i % 2, (i * 3 + 1) % n);
        if i % 3 == 0 {
            s = s.with_qualifiers([(2, (i + 5) % n)]);
        }
        if i % 5 == 0 {
            s = s.with_qualifiers([(2, (i + 5) % n), (1, i % n)]);
        }
        let split = match i % 10 {
            8 => Split::Valid,
            9 => Split::Test,
            _ => Split::Train,
        };
        g.push(s, split).unwrap();
    }
    g
}

fn dataset(root: &Path, name: &str, n: usize) -> PathBuf {
    let dir = root.join(name);
    write_dataset(&toy_graph(n, 0), &dir, DatasetFormat::JsonlStatements).unwrap();
    dir
}

const SMALL: [&str; 10] = [
    "--set",
    "d_embed=8",
    "--set",
    "d_hidden=8",
    "--set",
    "n_layers=1",
    "--set",
    "eval_every=1",
    "--max-steps",
    "12",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(SMALL);
    args.extend(extra);
    hyt(&args)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_data_dir_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train(&tmp.path().join("absent"), &tmp.path().join("run"), &[]);
    assert_eq!(code(&o), 2);
    let o = hyt(&["load-check"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn load_check_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let o = hyt(&["load-check", "--data", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("entities      12"));
    assert!(text.contains("statements    40"));
    assert!(text.trim_end().ends_with("ok"));
}

#[test]
fn data_root_env_resolves_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), "toy", 12);
    let o = Command::new(env!("CARGO_BIN_EXE_hyt"))
        .args(["load-check", "--data", "toy"])
        .env("HYT_DATA_ROOT", tmp.path())
        .current_dir(tmp.path().join("toy"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("run");
    let o = train(&data, &out, &["--ablate", "entity-ln", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "checkpoint.bin",
        "last.bin",
        "train_log.jsonl",
        "mrr_vs_time.csv",
        "config.txt",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join(".lock").exists());
    let m = manifest(&out);
    assert_eq!(m["status"], "completed");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["model"]["use_entity_ln"], false);
    assert!(m["finished_at"].as_u64().unwrap() >= m["started_at"].as_u64().unwrap());
    assert!(stdout(&o).contains("use_entity_ln = false"));
    let config = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("max_steps = 12"));
    let steps = fs::read_to_string(out.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"step\""))
        .count();
    assert_eq!(steps, 12);
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "1").unwrap();
    let o = train(&data, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("manifest.json").exists());
}

fn log_without_timing(dir: &Path) -> Vec<LogRecord> {
    fs::read_to_string(dir.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<LogRecord>(l)
                .unwrap()
                .without_timing()
        })
        .collect()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    assert_eq!(code(&train(&data, &a, &["--seed", "7"])), 0);
    assert_eq!(code(&train(&data, &b, &["--seed", "7"])), 0);
    let m = a.join("manifest.json");
    let o = hyt(&[
        "train",
        "--from-manifest",
        m.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = fs::read(a.join("checkpoint.bin")).unwrap();
    for other in [&b, &c] {
        assert_eq!(fs::read(other.join("checkpoint.bin")).unwrap(), ckpt);
        assert_eq!(
            fs::read(other.join("last.bin")).unwrap(),
            fs::read(a.join("last.bin")).unwrap()
        );
        assert_eq!(log_without_timing(other), log_without_timing(&a));
    }
}

#[test]
fn resume_continues_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let (full, split) = (tmp.path().join("full"), tmp.path().join("split"));
    assert_eq!(code(&train(&data, &full, &["--set", "eval_every=0"])), 0);
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
    ];
    args.extend(&SMALL[..8]);
    args.extend(["--set", "eval_every=0", "--max-steps", "5"]);
    assert_eq!(code(&hyt(&args)), 0);
    args.truncate(args.len() - 1);
    args.extend(["12", "--resume"]);
    assert_eq!(code(&hyt(&args)), 0);
    assert_eq!(
        fs::read(split.join("last.bin")).unwrap(),
        fs::read(full.join("last.bin")).unwrap()
    );
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("run");
    let o = train(&data, &out, &["--lr", "1e30"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["status"], "diverged");
    assert!(String::from_utf8_lossy(&o.stderr).contains("masked at"));
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("run");
    assert_eq!(code(&train(&data, &out, &["--set", "no_such_key=1"])), 2);
    assert_eq!(code(&train(&data, &out, &["--set", "n_heads=3"])), 2);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "label_smoothing = 1.5\n").unwrap();
    assert_eq!(
        code(&train(&data, &out, &["--config", cfg.to_str().unwrap()])),
        2
    );
}

#[test]
fn eval_reports_splits_and_breakdown() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("run");
    assert_eq!(code(&train(&data, &out, &[])), 0);
    let ckpt = out.join("checkpoint.bin");
    let run = |split: &str, extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--split",
            split,
        ];
        args.extend(extra);
        hyt(&args)
    };
    let valid = run("valid", &[]);
    let test = run("test", &["--breakdown", "qualifiers"]);
    assert_eq!(
        code(&valid),
        0,
        "{}",
        String::from_utf8_lossy(&valid.stderr)
    );
    assert!(stdout(&valid).contains("split: valid"));
    assert!(stdout(&test).contains("split: test"));
    assert_ne!(stdout(&valid), stdout(&test));
    let g = toy_graph(12, 0);
    let mut counts = std::collections::BTreeSet::new();
    for s in g.split(Split::Test) {
        counts.insert(s.n_qualifiers());
    }
    for n in counts {
        assert!(stdout(&test).contains(&format!("qualifiers={n}")), "{n}");
    }
    let records = fs::read_to_string(out.join("eval.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    let rec: Value = serde_json::from_str(records.lines().last().unwrap()).unwrap();
    assert_eq!(rec["split"], "test");
}

#[test]
fn eval_rejects_other_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let other = dataset(tmp.path(), "other", 13);
    let out = tmp.path().join("run");
    assert_eq!(code(&train(&data, &out, &[])), 0);
    let ckpt = out.join("checkpoint.bin");
    let o = hyt(&[
        "eval",
        "--data",
        other.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn memorized_toy_prints_perfect_mrr() {
    let tmp = tempfile::tempdir().unwrap();
    let mut g = KnowledgeGraph::new(Vocabulary::numbered("e", 6), Vocabulary::numbered("r", 2));
    for (h, r, t) in [(0, 0, 1), (2, 1, 3), (4, 0, 5)] {
        g.push(Statement::triple(h, r, t), Split::Train).unwrap();
    }
    let data = tmp.path().join("tiny");
    write_dataset(&g, &data, DatasetFormat::TsvFlat).unwrap();
    let out = tmp.path().join("run");
    let o = hyt(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "d_embed=16",
        "--set",
        "d_hidden=16",
        "--set",
        "n_layers=1",
        "--set",
        "attn_dropout=0",
        "--set",
        "head_dropout=0",
        "--set",
        "ent_emb_dropout=0",
        "--set",
        "init_std=0.1",
        "--lr",
        "0.01",
        "--max-steps",
        "150",
        "--batch-size",
        "6",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("checkpoint.bin");
    let o = hyt(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let overall = stdout(&o)
        .lines()
        .find(|l| l.starts_with("overall"))
        .unwrap()
        .to_owned();
    assert!(overall.contains("1.000"), "{overall}");
}

#[test]
fn describe_counts_parameters() {
    let o = hyt(&[
        "describe",
        "--entities",
        "10",
        "--relations",
        "4",
        "--set",
        "d_embed=8",
        "--set",
        "d_hidden=16",
        "--set",
        "n_layers=1",
        "--set",
        "max_len=7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("embed.entity"));
    assert!(text.contains("11x8"));
    let total: usize = text
        .lines()
        .last()
        .unwrap()
        .split_whitespace()
        .last()
        .unwrap()
        .parse()
        .unwrap();
    let sum: usize = text
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("total"))
        .map(|l| {
            l.split_whitespace()
                .last()
                .unwrap()
                .parse::<usize>()
                .unwrap()
        })
        .sum();
    assert_eq!(total, sum);
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("report.csv");
    let o = hyt(&[
        "bench",
        "--sweep",
        "z=200,400",
        "--sweep",
        "d=8,16",
        "--reps",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.contains("aggregation,z-slope"));
    assert!(text.contains("lightweight,d-slope"));
    assert_eq!(code(&hyt(&["bench", "--reps", "2"])), 2);
}

#[test]
fn ablation_suite_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "toy", 12);
    let out = tmp.path().join("suite");
    let mut args = vec![
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
    ];
    args.extend(&SMALL[..8]);
    args.extend(["--max-steps", "4"]);
    let o = hyt(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    for label in [
        "full",
        "-entity-LN",
        "-entity-dropout",
        "-relation-LN",
        "HT w/o aux",
    ] {
        assert!(table.lines().any(|l| l.starts_with(label)), "{label}");
    }
    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["status"], "completed");
    assert_eq!(
        fs::read_to_string(out.join("no-aux/config.txt"))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("use_aux_task"))
            .count(),
        1
    );
    assert!(fs::read_to_string(out.join("no-aux/config.txt"))
        .unwrap()
        .contains("use_aux_task = false"));
}
