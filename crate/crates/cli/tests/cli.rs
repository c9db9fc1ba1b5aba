//! End-to-end behaviour of the command-line tool.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use curriculum_lstm::checkpoint::Checkpoint;
use curriculum_lstm::config::{Config, Preset};
use curriculum_lstm::history::load_history;
use curriculum_lstm::sweep_table;
use curriculum_lstm_core::curriculum::RegimenKind;

const TINY: &str = "seqs_per_length = 5\nmax_len = 6\nval_size = 10\ntest_size = 10\nhidden = 3\nembed = 3\npatience = 2\nmax_epochs_per_phase = 20\nruns = 2\n";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curriculum-lstm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = bin(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(ws.path("tiny.cfg"), TINY).unwrap();
        ok(&["generate", "--config", &ws.arg("tiny.cfg"), "--seed", "3", "--out", &ws.arg("data")]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn train(&self, regimen: &str, out: &str) -> PathBuf {
        ok(&[
            "train", "--config", &self.arg("tiny.cfg"), "--seed", "3", "--data", &self.arg("data"), "--out", &self.arg(out),
            "--set", &format!("regimen={regimen}"),
        ]);
        single_dir(&self.path(out))
    }
}

fn single_dir(dir: &Path) -> PathBuf {
    let entries: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries.into_iter().next().unwrap()
}

fn dataset_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("split\t"))
        .map(str::to_string)
        .collect()
}

#[test]
fn presets_generate_the_documented_training_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, train) in [("desk", 1900), ("paper", 19000)] {
        let out = dir.path().join(preset);
        ok(&["generate", "--preset", preset, "--seed", "1", "--out", out.to_str().unwrap()]);
        let rows = dataset_rows(&out.join("dataset.tsv"));
        assert_eq!(rows.iter().filter(|r| r.starts_with("train\t")).count(), train);
        assert!(out.join("manifest.json").is_file() && out.join("config.txt").is_file());
    }
}

#[test]
fn baby_steps_on_desk_data_has_one_phase_per_length() {
    let mut config = Config::preset(Preset::Desk);
    config.experiment.max_epochs_per_phase = Some(1);
    config.experiment.regimen = RegimenKind::BabySteps;
    let dir = tempfile::tempdir().unwrap();
    curriculum_lstm::commands::generate(&config, &dir.path().join("data")).unwrap();
    let out = curriculum_lstm::commands::train(&config, &dir.path().join("data"), &dir.path().join("runs")).unwrap();
    let (header, history) = load_history(&out.dir.join("run-00/history.jsonl")).unwrap();
    assert_eq!(header.regimen, "babysteps");
    assert_eq!(history.epochs_per_phase(), vec![1; 19]);
}

#[test]
fn no_curriculum_training_writes_every_run_and_a_summary() {
    let ws = Workspace::new();
    let dir = ws.train("nocl", "runs");
    for run in ["run-00", "run-01"] {
        for file in ["history.jsonl", "train_log.jsonl", "checkpoint.txt", "result.json"] {
            assert!(dir.join(run).join(file).is_file(), "{run}/{file}");
        }
    }
    assert!(!dir.join("run-02").exists());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().map(Vec::len), Some(2));
    assert_eq!(summary["seed"], 3);
    let ckpt = Checkpoint::load(&dir.join("checkpoint.txt")).unwrap();
    assert_eq!(ckpt.provenance.seed, 3);
    assert_eq!(ckpt.params.dims.hidden, 3);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let ws = Workspace::new();
    let dir = ws.train("babysteps", "runs");
    let text = std::fs::read_to_string(dir.join("checkpoint.txt")).unwrap();
    let marker = text.find("matrix gates").unwrap();
    let line_start = marker + text[marker..].find('\n').unwrap() + 1;
    let mut bytes = text.into_bytes();
    bytes[line_start] = if bytes[line_start] == b'-' { b'1' } else { b'-' };
    std::fs::write(ws.path("bad.txt"), &bytes).unwrap();
    let err = fails(&["eval", "--checkpoint", &ws.arg("bad.txt"), "--data", &ws.arg("data"), "--out", &ws.arg("e")]);
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn dimension_mismatch_names_both_shapes() {
    let ws = Workspace::new();
    let dir = ws.train("babysteps", "runs");
    let labeled = ws.path("labeled");
    std::fs::create_dir(&labeled).unwrap();
    for f in ["train.txt", "validation.txt", "test.txt"] {
        std::fs::write(labeled.join(f), "0|a b\n1|b c a\n").unwrap();
    }
    let ckpt = dir.join("checkpoint.txt").display().to_string();
    let err = fails(&["eval", "--checkpoint", &ckpt, "--data", labeled.to_str().unwrap(), "--out", &ws.arg("e")]);
    assert!(err.contains("dimension mismatch"), "{err}");
    assert!(err.contains("vocab 10") && err.contains("vocab 3"), "{err}");
}

#[test]
fn missing_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere").display().to_string();
    let out = dir.path().join("out").display().to_string();
    let err = fails(&["train", "--data", &nowhere, "--out", &out]);
    assert!(err.starts_with("error:") && err.contains("nowhere"), "{err}");
    let err = fails(&["probe", "--checkpoint", &nowhere, "--sequence", "1 2", "--out", &out]);
    assert!(err.contains("nowhere"), "{err}");
    let err = fails(&["generate", "--set", "hidden=zero", "--out", &out]);
    assert!(err.contains("hidden"), "{err}");
}

#[test]
fn labeled_directories_train_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("labeled");
    std::fs::create_dir(&data).unwrap();
    let lines = "0|a a b\n1|b b a\n0|a\n1|b\n0|a a\n1|b a b b\n";
    for f in ["train.txt", "validation.txt", "test.txt"] {
        std::fs::write(data.join(f), lines).unwrap();
    }
    let out = dir.path().join("runs");
    ok(&[
        "train", "--set", "task=labeled", "--set", "hidden=3", "--set", "embed=3", "--set", "patience=1",
        "--set", "max_epochs_per_phase=5", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    let ckpt = single_dir(&out).join("checkpoint.txt");
    let params = Checkpoint::load(&ckpt).unwrap().params;
    assert_eq!(params.dims.vocab, 2);
    assert_eq!(params.dims.out_dim(), 2);
    let probe_out = dir.path().join("probe");
    ok(&[
        "probe", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out",
        probe_out.to_str().unwrap(),
    ]);
    assert!(probe_out.join("traces/seq-0000.tsv").is_file());
}

#[test]
fn sweep_cells_match_standalone_training() {
    let ws = Workspace::new();
    ok(&[
        "sweep", "--config", &ws.arg("tiny.cfg"), "--seed", "3", "--data", &ws.arg("data"), "--axis", "hidden_size",
        "--values", "2", "--regimens", "babysteps", "--out", &ws.arg("sweep"),
    ]);
    let table_path = std::fs::read_dir(ws.path("sweep"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "tsv"))
        .unwrap();
    let (table, _) = sweep_table::parse(&std::fs::read_to_string(table_path).unwrap()).unwrap();
    ok(&[
        "train", "--config", &ws.arg("tiny.cfg"), "--seed", "3", "--data", &ws.arg("data"), "--out", &ws.arg("alone"),
        "--set", "regimen=babysteps", "--set", "hidden=2", "--set", "embed=2",
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(single_dir(&ws.path("alone")).join("summary.json")).unwrap()).unwrap();
    assert_eq!(table.rows[0].metric, summary["test_mean"].as_f64());
}

#[test]
fn failed_sweep_cells_are_recorded() {
    let ws = Workspace::new();
    let stdout = ok(&[
        "sweep", "--config", &ws.arg("tiny.cfg"), "--seed", "3", "--data", &ws.arg("data"), "--axis", "data_fraction",
        "--values", "0.001,1", "--regimens", "nocl", "--out", &ws.arg("sweep"),
    ]);
    assert!(stdout.contains("fail"), "{stdout}");
    let table_path = std::fs::read_dir(ws.path("sweep"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "tsv"))
        .unwrap();
    let (table, _) = sweep_table::parse(&std::fs::read_to_string(table_path).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows[0].metric.is_none());
    assert!(table.rows[1].metric.is_some());
}

#[test]
fn sequence_probe_writes_one_row_per_token() {
    let ws = Workspace::new();
    let dir = ws.train("babysteps", "runs");
    let ckpt = dir.join("checkpoint.txt").display().to_string();
    ok(&["probe", "--checkpoint", &ckpt, "--sequence", "5 0 2 4 6", "--out", &ws.arg("p")]);
    let text = std::fs::read_to_string(ws.path("p/trace.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "t\ttoken\tprobe\toracle");
    let oracle: Vec<&str> = rows[1..].iter().map(|r| r.split('\t').nth(3).unwrap()).collect();
    assert_eq!(oracle, ["5.0", "5.0", "7.0", "11.0", "17.0"]);
}
