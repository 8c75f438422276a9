use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lidarbeam::objective::METRICS_HEADER;
use lidarbeam::trainer::{AblationSpec, CellSpec, TrainConfig, HISTORY_HEADER};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lidarbeam"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, first: u64, n: usize) -> PathBuf {
    let p = dir.join(name);
    ok(&["gen", "--scenes", &n.to_string(), "--first-id", &first.to_string(), "--out", s(&p)]);
    p
}

fn small_config(dir: &Path, train: &Path, test: &Path, epochs: usize) -> PathBuf {
    let mut cfg = TrainConfig::default().with_epochs(epochs).unwrap();
    cfg.train_data = Some(train.to_path_buf());
    cfg.test_data = Some(test.to_path_buf());
    let p = dir.join("train.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn gen_is_deterministic_and_rejects_zero_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.jsonl", 0, 10);
    let b = gen(dir.path(), "b.jsonl", 0, 10);
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert_eq!(text.iter().filter(|&&c| c == b'\n').count(), 10);
    assert!(dir.path().join("a.meta.json").exists());

    let c = gen(dir.path(), "c.jsonl", 10, 10);
    let recs = lidarbeam::sim::read_dataset(&c).unwrap();
    assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), (10..20).collect::<Vec<_>>());

    let out = run(&["gen", "--scenes", "0", "--out", s(&dir.path().join("z.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn preprocess_writes_one_grid_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(dir.path(), "d.jsonl", 0, 4);
    let out = dir.path().join("grids.jsonl");
    let line: Value = serde_json::from_str(ok(&["preprocess", "--data", s(&d), "--out", s(&out)]).trim()).unwrap();
    assert_eq!(line["grids"], 4);
    assert_eq!((line["rows"].as_u64(), line["cols"].as_u64()), (Some(200), Some(20)));
}

#[test]
fn train_eval_and_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let tr = gen(dir.path(), "train.jsonl", 0, 20);
    let te = gen(dir.path(), "test.jsonl", 100, 12);
    let cfg = small_config(dir.path(), &tr, &te, 5);
    let run_dir = dir.path().join("run");

    let line: Value = serde_json::from_str(ok(&["train", "--config", s(&cfg), "--run-dir", s(&run_dir)]).trim()).unwrap();
    assert_eq!(line["split"], "test");
    let hist = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
    assert_eq!(hist.lines().next().unwrap(), HISTORY_HEADER.join(","));
    assert_eq!(hist.lines().count(), 6);
    for f in ["final.ckpt.json", "timing.csv", "config.json", "metrics.csv"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }

    let ck = run_dir.join("final.ckpt.json");
    let m = dir.path().join("m.csv");
    let first: Value = serde_json::from_str(
        ok(&["eval", "--checkpoint", s(&ck), "--data", s(&te), "--k", "1,5,10", "--out", s(&m)]).trim(),
    )
    .unwrap();
    assert_eq!(first["k"], 1);
    let rows = std::fs::read_to_string(&m).unwrap();
    assert_eq!(rows.lines().next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(rows.lines().count(), 4);
    let saved = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows, saved, "eval reproduces the metrics written after training");

    let o = dir.path().join("o.csv");
    ok(&["eval", "--oracle", "--data", s(&te), "--k", "1,5,10", "--out", s(&o)]);
    for row in std::fs::read_to_string(&o).unwrap().lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1].parse::<f64>().unwrap(), 1.0, "{row}");
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0, "{row}");
    }

    let missing = dir.path().join("nope.jsonl");
    let out = run(&["train", "--config", s(&cfg), "--train", s(&missing), "--run-dir", s(&run_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    let out = run(&["eval", "--oracle", "--data", s(&te), "--out", "/proc/forbidden/o.csv"]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&["eval", "--data", s(&te), "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), "{\"epochs\": \"many\"}").unwrap();
    let out = run(&["train", "--config", s(&dir.path().join("bad.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prune_writes_masks_and_sparsity_table() {
    let dir = tempfile::tempdir().unwrap();
    let tr = gen(dir.path(), "train.jsonl", 0, 16);
    let te = gen(dir.path(), "test.jsonl", 100, 8);
    let cfg = small_config(dir.path(), &tr, &te, 5);
    let run_dir = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--run-dir", s(&run_dir)]);
    let out = dir.path().join("pruned");
    let stdout = ok(&[
        "prune",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&run_dir.join("final.ckpt.json")),
        "--steps",
        "0.5",
        "--finetune-epochs",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(stdout.lines().count(), 2);
    let lines: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["flavor"], "unstructured");
    assert!((lines[0]["ratio"].as_f64().unwrap() - 0.5).abs() < 1e-4);
    assert_eq!(lines[1]["flavor"], "structured");
    assert!(lines[1]["ratio"].as_f64().unwrap() > 0.3);
    assert!(out.join("unstructured.ckpt.json").exists());
    assert!(out.join("structured.ckpt.json").exists());
    let table = std::fs::read_to_string(out.join("sparsity.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn ablate_two_cells_two_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let tr = gen(dir.path(), "train.jsonl", 0, 12);
    let te = gen(dir.path(), "test.jsonl", 100, 8);
    let mut base = TrainConfig::default().with_epochs(5).unwrap();
    base.train_data = Some(tr);
    base.test_data = Some(te);
    let spec = AblationSpec {
        base,
        cells: vec![
            CellSpec { name: "beta-0.8".into(), overrides: json!({}), prune: None },
            CellSpec { name: "beta-0.0".into(), overrides: json!({ "loss": { "beta": 0.0 } }), prune: None },
        ],
    };
    let spec_path = dir.path().join("ablate.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = dir.path().join("abl");
    let csv = ok(&["ablate", "--config", s(&spec_path), "--seeds", "2", "--out", s(&out)]);
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("summary.csv")).unwrap(), csv);
    for cell in ["beta-0.8", "beta-0.0"] {
        for seed in 0..2 {
            assert!(out.join(cell).join(format!("seed-{seed}")).join("metrics.csv").exists());
        }
    }
    let out = run(&["ablate", "--config", s(&spec_path), "--seeds", "0", "--out", s(&out)]);
    assert_eq!(out.status.code(), Some(2));
}
