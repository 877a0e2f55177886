use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use influprune::cli::Manifest;
use sha2::{Digest, Sha256};

const CONFIG: &str = r#"{
  "dataset": { "source": { "synthetic": { "n_users": 150, "n_items": 30, "density": 0.2, "drift": 0.5, "seed": 3 } } },
  "influence": { "iterations": 500, "repeats": 1 },
  "target": { "model": { "pretrain": { "epochs": 5 } } },
  "selection": { "budget": { "count": 16 }, "n_groups": 4 },
  "evaluation": { "seeds": [0], "strategies": ["dealrec", "random"] },
  "validation": { "n_train": 80, "n_probes": 10, "hvp": { "iterations": 2000, "damping": 0.05, "scale": 10.0, "repeats": 2 } }
}"#;

struct Workspace {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    work: PathBuf,
}

fn workspace() -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let work = tmp.path().join("work");
    Workspace {
        _tmp: tmp,
        config,
        work,
    }
}

fn run(ws: &Workspace, stage: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_influprune"))
        .arg(stage)
        .arg("--config")
        .arg(&ws.config)
        .arg("--workdir")
        .arg(&ws.work)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn manifest(ws: &Workspace) -> Manifest {
    serde_json::from_str(&fs::read_to_string(ws.work.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn all_writes_every_artifact_and_hashes_it() {
    let ws = workspace();
    let out = run(&ws, "all", &[]);
    ok(&out);
    for artifact in [
        "dataset/train.tsv",
        "surrogate.ckpt",
        "influence.jsonl",
        "effort.jsonl",
        "subset.json",
        "target_finetuned.ckpt",
        "report.json",
        "report.csv",
        "validation.json",
    ] {
        assert!(ws.work.join(artifact).is_file(), "{artifact}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Spearman") && stdout.contains("IHVP"), "{stdout}");

    let m = manifest(&ws);
    assert_eq!(m.stages.len(), 8);
    for (stage, record) in &m.stages {
        assert!(!record.outputs.is_empty(), "{stage}");
        for (file, hash) in &record.outputs {
            assert_eq!(&sha(&ws.work.join(file)), hash, "{stage}: {file}");
        }
    }
    assert!(m.stages["select"].inputs.contains_key("influence.jsonl"));
}

#[test]
fn select_without_influence_exits_2() {
    let ws = workspace();
    ok(&run(&ws, "ingest", &[]));
    let out = run(&ws, "select", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("score-influence"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn changed_config_exits_3_unless_forced() {
    let ws = workspace();
    ok(&run(&ws, "ingest", &[]));
    let out = run(&ws, "train-surrogate", &["--seed", "9"]);
    assert_eq!(out.status.code(), Some(3));
    ok(&run(&ws, "train-surrogate", &["--seed", "9", "--force"]));
}

/// Strips wall-clock fields, the only nondeterministic part of the reports.
fn without_timings(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    if path.extension().is_some_and(|e| e == "csv") {
        return text
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n");
    }
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("phases");
    for row in v["rows"].as_array_mut().unwrap() {
        for key in ["select_s", "finetune_s", "evaluate_s"] {
            row.as_object_mut().unwrap().remove(key);
        }
    }
    v.to_string()
}

#[test]
fn rerunning_stages_reproduces_outputs() {
    let ws = workspace();
    let stages = [
        "ingest",
        "train-surrogate",
        "score-influence",
        "score-effort",
        "select",
        "finetune",
        "evaluate",
    ];
    for s in stages {
        ok(&run(&ws, s, &[]));
    }
    let first = manifest(&ws);
    for s in stages {
        ok(&run(&ws, s, &[]));
    }
    let second = manifest(&ws);
    for s in stages {
        for (file, hash) in &second.stages[s].outputs {
            if file.starts_with("report.") {
                continue;
            }
            assert_eq!(&first.stages[s].outputs[file], hash, "{s}: {file}");
        }
    }
    let before = ws.work.join("before");
    fs::create_dir(&before).unwrap();
    for f in ["report.json", "report.csv"] {
        fs::copy(ws.work.join(f), before.join(f)).unwrap();
    }
    ok(&run(&ws, "evaluate", &[]));
    for f in ["report.json", "report.csv"] {
        assert_eq!(without_timings(&before.join(f)), without_timings(&ws.work.join(f)), "{f}");
    }
}
