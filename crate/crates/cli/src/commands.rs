//! The command implementations behind the binary.
//!
//! Each command writes its artifacts and returns the one-line summary the
//! binary prints. Run directories are `<out>/<short config hash>-<seed>`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use curriculum_lstm_core::curriculum::{Curriculum, EpochRecord, Goal, RegimenKind};
use curriculum_lstm_core::dataset::{
    running_sum_oracle, subsample_fraction, try_generate_digit_sum, DatasetSource, DatasetSplit, SequenceExample,
    Target,
};
use curriculum_lstm_core::experiment::{
    run_experiment_observed, ExperimentObserver, ExperimentOutcome, RunResult, TaskKind, SUBSAMPLE_STREAM,
};
use curriculum_lstm_core::linalg::derive_seed;
use curriculum_lstm_core::model::{predict, Head, ModelDims, Prediction};
use curriculum_lstm_core::probe::{delta_analysis, probe, running_sum_correlation, DeltaSeries};
use curriculum_lstm_core::sweep::{sweep_cells, CellResult, CellStatus, ResultsTable, SweepAxis, SweepCell};
use curriculum_lstm_core::train::{evaluate, gradient_check_suite, loss, CheckInstanceSpec};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset_file::{self, DataLocation, DUMP_FILE, LABELED_FILES};
use crate::format::{fmt_f64, sha256_hex, write_file, Provenance};
use crate::history::RunLogs;
use crate::probe_files::{delta_runs_text, delta_text, trace_text};
use crate::sweep_table;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

fn json_file(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn provenance(config: &Config) -> Provenance {
    Provenance::new(config.hash(), config.seed())
}

fn metric_name(head: Head) -> &'static str {
    match head {
        Head::Regression => "mse",
        Head::Classification { .. } => "accuracy",
    }
}

fn head_text(head: Head) -> String {
    match head {
        Head::Regression => "regression".into(),
        Head::Classification { classes } => format!("classification with {classes} classes"),
    }
}

/// Writes a Digit Sum dataset dump, the resolved config and a manifest into `out`.
pub fn generate(config: &Config, out: &Path) -> Result<String> {
    if config.experiment.task != TaskKind::DigitSum {
        bail!("generate produces Digit Sum data; labeled corpora are read from train.txt, validation.txt and test.txt");
    }
    create_dir(out)?;
    let split = try_generate_digit_sum(&config.experiment.dataset, config.experiment.dataset_seed())?;
    let prov = provenance(config);
    let text = dataset_file::to_text(&split, &prov);
    let path = out.join(DUMP_FILE);
    write_file(&path, &text)?;
    write_file(&out.join("config.txt"), config.to_file_text())?;
    let mut manifest = prov.to_json();
    let m = manifest.as_object_mut().unwrap();
    m.insert("format".into(), json!("curriculum-lstm dataset manifest 1"));
    m.insert("dataset_file".into(), json!(DUMP_FILE));
    m.insert("dataset_sha256".into(), json!(sha256_hex(text.as_bytes())));
    m.insert("dataset_seed".into(), json!(split.seed));
    m.insert("train".into(), json!(split.train.len()));
    m.insert("validation".into(), json!(split.validation.len()));
    m.insert("test".into(), json!(split.test.len()));
    m.insert("vocab".into(), json!(split.vocab_size));
    json_file(&out.join("manifest.json"), &manifest)?;
    Ok(format!(
        "generated {}/{}/{} train/validation/test examples (seed {}) -> {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        config.seed(),
        path.display()
    ))
}

/// A dataset and the SHA-256 of the files it was read from.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub split: DatasetSplit,
    pub sha256: String,
}

pub fn load_data(config: &Config, data: &Path) -> Result<LoadedData> {
    let location = dataset_file::resolve_data_path(data).context("missing dataset")?;
    match location {
        DataLocation::Dump(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            let file = dataset_file::parse(&text).with_context(|| format!("bad dataset file {}", path.display()))?;
            Ok(LoadedData {
                split: file.split,
                sha256: sha256_hex(text.as_bytes()),
            })
        }
        DataLocation::Labeled(dir) => {
            let split = dataset_file::load_labeled_dir(&dir, &config.separator, config.vocab_policy)
                .with_context(|| format!("bad labeled dataset in {}", dir.display()))?;
            let mut bytes = Vec::new();
            for f in LABELED_FILES {
                bytes.extend(std::fs::read(dir.join(f))?);
            }
            Ok(LoadedData {
                split,
                sha256: sha256_hex(&bytes),
            })
        }
    }
}

pub fn run_dir(out: &Path, config: &Config) -> PathBuf {
    out.join(format!("{}-{}", config.short_hash(), config.seed()))
}

/// Writes per-run logs and checkpoints while the experiment trains.
struct RunWriter<'a> {
    dir: &'a Path,
    config: &'a Config,
    provenance: Provenance,
    logs: Option<RunLogs>,
    failure: Option<anyhow::Error>,
}

impl RunWriter<'_> {
    fn run_path(&self, run: usize) -> PathBuf {
        self.dir.join(format!("run-{run:02}"))
    }

    fn keep<T>(&mut self, r: Result<T>) -> curriculum_lstm_core::Result<T> {
        r.map_err(|e| {
            let msg = format!("{e:#}");
            self.failure = Some(e);
            curriculum_lstm_core::Error::InvalidArgument(msg)
        })
    }
}

impl ExperimentObserver for RunWriter<'_> {
    fn run_started(&mut self, run: usize, seed: u64) -> curriculum_lstm_core::Result<()> {
        let path = self.run_path(run);
        let r = create_dir(&path)
            .and_then(|_| RunLogs::create(&path, &self.provenance, self.config.experiment.regimen, run, seed));
        self.logs = Some(self.keep(r)?);
        Ok(())
    }

    fn epoch(&mut self, _run: usize, record: &EpochRecord) -> curriculum_lstm_core::Result<()> {
        let r = self.logs.as_mut().expect("run started").record(record);
        self.keep(r)
    }

    fn run_finished(&mut self, run: usize, result: &RunResult) -> curriculum_lstm_core::Result<()> {
        let path = self.run_path(run);
        let ckpt = Checkpoint {
            params: result.outcome.best.clone(),
            provenance: self.provenance.clone(),
            run_seed: result.seed,
            best_epoch: result.outcome.best_epoch,
            best_metric: result.outcome.best_metric,
            config: self.config.clone(),
        };
        let r = write_file(&path.join("checkpoint.txt"), ckpt.to_text())
            .and_then(|_| json_file(&path.join("result.json"), &run_json(run, result)));
        self.logs = None;
        self.keep(r)
    }
}

fn run_json(run: usize, r: &RunResult) -> serde_json::Value {
    json!({
        "run": run,
        "run_seed": r.seed,
        "test_metric": r.test_metric(),
        "test_mean_loss": r.test.mean_loss,
        "test_accuracy": r.test.accuracy,
        "test_count": r.test.count,
        "best_epoch": r.outcome.best_epoch,
        "best_validation_metric": r.outcome.best_metric,
        "epochs": r.outcome.history.records.len(),
        "epochs_per_phase": r.outcome.history.epochs_per_phase(),
    })
}

/// Artifacts of [`train`].
pub struct TrainOutput {
    pub dir: PathBuf,
    pub outcome: ExperimentOutcome,
    /// Run with the best validation metric; its checkpoint is copied to `checkpoint.txt`.
    pub best_run: usize,
    pub summary: String,
}

/// Trains `config` on the dataset at `data` and writes a run directory under `out`.
pub fn train(config: &Config, data: &Path, out: &Path) -> Result<TrainOutput> {
    let data = load_data(config, data)?;
    train_loaded(config, &data, out)
}

pub fn train_loaded(config: &Config, data: &LoadedData, out: &Path) -> Result<TrainOutput> {
    config.validate()?;
    let mut split = data.split.clone();
    let mut dropped = Vec::new();
    if config.data_fraction < 1.0 {
        let seed = derive_seed(config.seed(), SUBSAMPLE_STREAM);
        let sub = subsample_fraction(&split, config.data_fraction, &Curriculum::Length, seed)?;
        for score in &sub.dropped_scores {
            log::warn!("fraction {} leaves no examples of length {score}; bucket dropped", config.data_fraction);
        }
        dropped = sub.dropped_scores;
        split = sub.split;
    }
    let dir = run_dir(out, config);
    create_dir(&dir)?;
    write_file(&dir.join("config.txt"), config.to_file_text())?;
    let prov = provenance(config);
    let mut writer = RunWriter {
        dir: &dir,
        config,
        provenance: prov.clone(),
        logs: None,
        failure: None,
    };
    let outcome = match run_experiment_observed(&config.experiment, &split, &mut writer) {
        Ok(o) => o,
        Err(e) => {
            let cause = writer.failure.take().unwrap_or_else(|| anyhow!(e));
            return Err(cause.context(format!("training aborted; partial history kept in {}", dir.display())));
        }
    };

    let head = split.head();
    let goal = match head {
        Head::Regression => Goal::Minimize,
        Head::Classification { .. } => Goal::Maximize,
    };
    let mut best_run = 0;
    for (i, r) in outcome.runs.iter().enumerate() {
        if goal.is_better(r.outcome.best_metric, outcome.runs[best_run].outcome.best_metric) {
            best_run = i;
        }
    }
    std::fs::copy(
        dir.join(format!("run-{best_run:02}")).join("checkpoint.txt"),
        dir.join("checkpoint.txt"),
    )
    .context("cannot copy the best checkpoint")?;

    let mut summary = prov.to_json();
    let m = summary.as_object_mut().unwrap();
    m.insert("format".into(), json!("curriculum-lstm run summary 1"));
    m.insert("regimen".into(), json!(config.experiment.regimen.name()));
    m.insert("metric".into(), json!(metric_name(head)));
    m.insert("test_mean".into(), json!(outcome.test_mean));
    m.insert("test_stddev".into(), json!(outcome.test_stddev));
    m.insert("best_run".into(), json!(best_run));
    m.insert("dataset_sha256".into(), json!(data.sha256));
    m.insert("train_size".into(), json!(split.train.len()));
    m.insert("dropped_lengths".into(), json!(dropped));
    m.insert(
        "runs".into(),
        outcome.runs.iter().enumerate().map(|(i, r)| run_json(i, r)).collect(),
    );
    json_file(&dir.join("summary.json"), &summary)?;

    let first = &outcome.runs[0];
    let line = if outcome.runs.len() > 1 {
        format!(
            "{}: test {} mean {} sd {} over {} runs -> {}",
            config.experiment.regimen,
            metric_name(head),
            fmt_f64(outcome.test_mean),
            fmt_f64(outcome.test_stddev),
            outcome.runs.len(),
            dir.display()
        )
    } else {
        format!(
            "{}: test {} {} ({} phases, best epoch {}) -> {}",
            config.experiment.regimen,
            metric_name(head),
            fmt_f64(outcome.test_mean),
            first.outcome.history.phase_count(),
            first.outcome.best_epoch,
            dir.display()
        )
    };
    Ok(TrainOutput {
        dir,
        outcome,
        best_run,
        summary: line,
    })
}

/// Parses `"5 0 2 4 6"` or `"5,0,2,4,6"`.
pub fn parse_sequence(text: &str) -> Result<Vec<usize>> {
    let tokens = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| anyhow!("token {t:?} is not a non-negative integer")))
        .collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        bail!("empty sequence");
    }
    Ok(tokens)
}

fn check_compatible(dims: &ModelDims, vocab: usize, head: Head) -> Result<()> {
    if dims.vocab != vocab || dims.head != head {
        bail!(
            "dimension mismatch: checkpoint has vocab {} and a {} head; dataset has vocab {} and a {} head",
            dims.vocab,
            head_text(dims.head),
            vocab,
            head_text(head)
        );
    }
    Ok(())
}

fn check_tokens(dims: &ModelDims, tokens: &[usize]) -> Result<()> {
    if let Some(&t) = tokens.iter().find(|&&t| t >= dims.vocab) {
        bail!("dimension mismatch: token {t} is outside the checkpoint vocabulary of size {}", dims.vocab);
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("rejected checkpoint {}", path.display()))
}

fn split_part<'a>(split: &'a DatasetSplit, name: &str) -> Result<&'a [SequenceExample]> {
    Ok(match name {
        "train" => &split.train,
        "validation" => &split.validation,
        "test" => &split.test,
        _ => bail!("unknown split {name:?}; expected train, validation or test"),
    })
}

fn digit_target(head: Head, tokens: &[usize]) -> Option<Target> {
    (head == Head::Regression && tokens.iter().all(|&t| t <= 9))
        .then(|| Target::Scalar(tokens.iter().sum::<usize>() as f64))
}

fn prediction_text(p: &Prediction) -> String {
    match p {
        Prediction::Scalar(v) => fmt_f64(*v),
        Prediction::Distribution(_) => p.argmax().unwrap_or(0).to_string(),
    }
}

/// What [`eval`] evaluates.
pub enum EvalInput<'a> {
    Dataset { data: &'a Path, split: &'a str },
    Sequence(&'a [usize]),
}

/// Predictions of a checkpoint, one row per example in `<out>/eval.tsv`.
pub fn eval(checkpoint: &Path, input: EvalInput<'_>, out: &Path) -> Result<String> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dims = ckpt.params.dims;
    let examples: Vec<(Vec<usize>, Option<Target>)> = match input {
        EvalInput::Sequence(tokens) => {
            check_tokens(&dims, tokens)?;
            vec![(tokens.to_vec(), digit_target(dims.head, tokens))]
        }
        EvalInput::Dataset { data, split } => {
            let loaded = load_data(&ckpt.config, data)?;
            check_compatible(&dims, loaded.split.vocab_size, loaded.split.head())?;
            split_part(&loaded.split, split)?
                .iter()
                .map(|e| (e.tokens.clone(), Some(e.target)))
                .collect()
        }
    };
    create_dir(out)?;
    let mut text = ckpt.provenance.comment_lines();
    text.push_str("index\ttarget\tprediction\tloss\n");
    let mut last = String::new();
    for (i, (tokens, target)) in examples.iter().enumerate() {
        let p = predict(&ckpt.params, tokens)?;
        last = prediction_text(&p);
        let (t, l) = match target {
            Some(t) => {
                let l = loss(&p, t)?;
                let t = match t {
                    Target::Scalar(y) => fmt_f64(*y),
                    Target::Class(k) => k.to_string(),
                };
                (t, fmt_f64(l))
            }
            None => (String::new(), String::new()),
        };
        text.push_str(&format!("{i}\t{t}\t{last}\t{l}\n"));
    }
    let path = out.join("eval.tsv");
    write_file(&path, text)?;
    if examples.len() == 1 {
        return Ok(format!("prediction {last} -> {}", path.display()));
    }
    let scored: Vec<SequenceExample> = examples
        .into_iter()
        .filter_map(|(tokens, target)| target.map(|target| SequenceExample { tokens, target }))
        .collect();
    let e = evaluate(&ckpt.params, &scored)?;
    let detail = match e.accuracy {
        Some(a) => format!("accuracy {} (mean loss {})", fmt_f64(a), fmt_f64(e.mean_loss)),
        None => format!("mse {}", fmt_f64(e.mean_loss)),
    };
    Ok(format!("{detail} over {} examples -> {}", e.count, path.display()))
}

/// What [`probe_cmd`] probes.
pub enum ProbeInput<'a> {
    Dataset { data: &'a Path, split: &'a str },
    Sequence(&'a [usize]),
}

/// Probe traces, Δ series and correlation summaries for one or more checkpoints.
pub fn probe_cmd(checkpoints: &[PathBuf], input: ProbeInput<'_>, out: &Path) -> Result<String> {
    if checkpoints.is_empty() {
        bail!("probe needs at least one checkpoint");
    }
    let ckpts = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    match input {
        ProbeInput::Sequence(tokens) => {
            let mut lines = Vec::new();
            for (i, c) in ckpts.iter().enumerate() {
                check_tokens(&c.params.dims, tokens)?;
                let mut trace = probe(&c.params, tokens)?;
                if digit_target(c.params.dims.head, tokens).is_some() {
                    trace = trace.with_oracle(running_sum_oracle(tokens)?)?;
                }
                let name = if ckpts.len() == 1 { "trace.tsv".to_string() } else { format!("trace-{i:02}.tsv") };
                let path = out.join(name);
                write_file(&path, trace_text(&trace, &c.provenance))?;
                lines.push(format!("final {} -> {}", prediction_text(trace.final_prediction()), path.display()));
            }
            Ok(format!("probed {} tokens: {}", tokens.len(), lines.join("; ")))
        }
        ProbeInput::Dataset { data, split } => {
            let mut series: Vec<DeltaSeries> = Vec::new();
            let mut corr_line = String::new();
            for (i, c) in ckpts.iter().enumerate() {
                let loaded = load_data(&c.config, data)?;
                check_compatible(&c.params.dims, loaded.split.vocab_size, loaded.split.head())?;
                let part = split_part(&loaded.split, split)?;
                if part.is_empty() {
                    bail!("the {split} split is empty");
                }
                let dir = if ckpts.len() == 1 { out.to_path_buf() } else { out.join(format!("checkpoint-{i:02}")) };
                let traces = dir.join("traces");
                create_dir(&traces)?;
                let digit_sum = matches!(loaded.split.source, DatasetSource::DigitSum(_));
                for (k, ex) in part.iter().enumerate() {
                    let mut trace = probe(&c.params, &ex.tokens)?;
                    if digit_sum {
                        trace = trace.with_oracle(running_sum_oracle(&ex.tokens)?)?;
                    }
                    write_file(&traces.join(format!("seq-{k:04}.tsv")), trace_text(&trace, &c.provenance))?;
                }
                if c.params.dims.head != Head::Regression {
                    continue;
                }
                let d = delta_analysis(&c.params, part)?;
                write_file(&dir.join("deltas.tsv"), delta_text(&d.series, &c.provenance))?;
                let mut summary = c.provenance.to_json();
                let m = summary.as_object_mut().unwrap();
                m.insert("format".into(), json!("curriculum-lstm probe summary 1"));
                m.insert("split".into(), json!(split));
                m.insert("sequences".into(), json!(part.len()));
                m.insert("delta_digit_correlation".into(), json!(d.correlation));
                m.insert("delta_pairs".into(), json!(d.pairs));
                if digit_sum {
                    let r = running_sum_correlation(&c.params, part)?;
                    m.insert("running_sum_correlation".into(), json!(r.correlation));
                    m.insert("running_sum_mean_abs_deviation".into(), json!(r.mean_abs_deviation));
                    m.insert("probe_values".into(), json!(r.count));
                    if i == 0 {
                        corr_line = format!(
                            ", running-sum correlation {}",
                            r.correlation.map_or("undefined".into(), fmt_f64)
                        );
                    }
                }
                json_file(&dir.join("correlation.json"), &summary)?;
                series.push(d.series);
            }
            if ckpts.len() > 1 && !series.is_empty() {
                write_file(&out.join("delta_runs.tsv"), delta_runs_text(&series, &ckpts[0].provenance))?;
            }
            Ok(format!(
                "probed {} checkpoint(s) on the {split} split{corr_line} -> {}",
                ckpts.len(),
                out.display()
            ))
        }
    }
}

/// The configuration a sweep cell trains.
pub fn cell_config(base: &Config, cell: &SweepCell) -> Config {
    let mut c = base.clone();
    c.experiment.regimen = cell.regimen;
    match cell.axis {
        SweepAxis::HiddenSize => {
            c.experiment.hidden = cell.value as usize;
            c.experiment.embed = cell.value as usize;
        }
        SweepAxis::DataFraction => c.data_fraction = cell.value,
    }
    c
}

/// Trains every (value, regimen) cell on up to `workers` threads and writes
/// `<out>/sweep-<axis>-<hash>-<seed>.tsv`; cell run directories go under `<out>`.
pub fn sweep(
    config: &Config,
    data: &Path,
    axis: SweepAxis,
    values: &[f64],
    regimens: &[RegimenKind],
    workers: usize,
    out: &Path,
) -> Result<(ResultsTable, PathBuf, String)> {
    let cells = sweep_cells(axis, values, regimens)?;
    let loaded = load_data(config, data)?;
    create_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("cannot start the worker pool")?;
    let results: Vec<Result<ExperimentOutcome>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|cell| train_loaded(&cell_config(config, cell), &loaded, out).map(|t| t.outcome))
            .collect()
    });
    let mut failed = 0;
    let rows = cells
        .into_iter()
        .zip(results)
        .map(|(cell, r)| match r {
            Ok(outcome) => CellResult::from_outcome(cell, &outcome),
            Err(e) => {
                failed += 1;
                log::warn!("{} {} {}: {e:#}", axis, fmt_f64(cell.value), cell.regimen);
                CellResult {
                    cell,
                    metric: None,
                    stddev: 0.0,
                    runs: 0,
                    status: CellStatus::Failed(format!("{e:#}")),
                }
            }
        })
        .collect();
    let table = ResultsTable { axis, rows };
    let path = out.join(format!("sweep-{axis}-{}-{}.tsv", config.short_hash(), config.seed()));
    write_file(&path, sweep_table::to_text(&table, &provenance(config)))?;
    let summary = format!(
        "sweep over {axis}: {} cells, {failed} failed -> {}",
        table.rows.len(),
        path.display()
    );
    Ok((table, path, summary))
}

/// Gradient checks of screened small instances, reported in `<out>/gradcheck.tsv`.
/// Fails after writing the report when any instance exceeds the tolerance.
pub fn gradcheck(heads: &[Head], instances: usize, first_seed: u64, step: f64, tolerance: f64, out: &Path) -> Result<String> {
    create_dir(out)?;
    let spec_text = format!(
        "gradcheck heads={heads:?} instances={instances} step={} tolerance={}",
        fmt_f64(step),
        fmt_f64(tolerance)
    );
    let prov = Provenance::new(sha256_hex(spec_text.as_bytes()), first_seed);
    let mut text = prov.comment_lines();
    text.push_str(&format!("# {spec_text}\nhead\tinstance_seed\tparameters\tmax_relative_error\tworst_index\tpassed\n"));
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut total = 0;
    for &head in heads {
        let report = gradient_check_suite(&CheckInstanceSpec::small(head), instances, first_seed, step, tolerance)?;
        for (seed, r) in &report.checks {
            total += 1;
            failures += usize::from(!r.passed());
            worst = worst.max(r.max_relative_error);
            text.push_str(&format!(
                "{}\t{seed}\t{}\t{}\t{}\t{}\n",
                match head {
                    Head::Regression => "regression".to_string(),
                    Head::Classification { classes } => format!("classification:{classes}"),
                },
                r.analytic.len(),
                fmt_f64(r.max_relative_error),
                r.worst_index,
                r.passed()
            ));
        }
    }
    let path = out.join("gradcheck.tsv");
    write_file(&path, text)?;
    let line = format!(
        "gradcheck: {total} instances, max relative error {worst:.3e} (tolerance {tolerance:e}), {failures} failed -> {}",
        path.display()
    );
    if failures > 0 {
        bail!(line);
    }
    Ok(line)
}
