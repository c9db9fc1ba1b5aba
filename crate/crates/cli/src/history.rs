//! Line-delimited JSON logs of a training run.
//!
//! Both files start with a header object carrying `format`, the provenance
//! triple, the regimen and the run seed. The regimen history
//! (`history.jsonl`) then holds one [`HistoryLine`] per epoch and is fully
//! deterministic. The training log (`train_log.jsonl`) holds one
//! [`LogLine`] per epoch and adds the elapsed wall time, so it is the one
//! artifact that differs between identical runs.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::Context as _;
use curriculum_lstm_core::curriculum::{EpochRecord, PhaseEnd, RegimenHistory, RegimenKind};
use serde::{Deserialize, Serialize};

use crate::format::{read_text, FormatError, Provenance};

pub const HISTORY_FORMAT: &str = "curriculum-lstm history 1";
pub const LOG_FORMAT: &str = "curriculum-lstm train log 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub regimen: String,
    pub run: usize,
    pub run_seed: u64,
}

/// One epoch of the regimen history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub phase: usize,
    pub buckets: Vec<usize>,
    pub epoch: usize,
    pub global_epoch: usize,
    pub train_size: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub snapshot: bool,
    pub phase_end: Option<String>,
}

impl From<&EpochRecord> for HistoryLine {
    fn from(r: &EpochRecord) -> Self {
        HistoryLine {
            phase: r.phase,
            buckets: r.buckets.clone(),
            epoch: r.epoch,
            global_epoch: r.global_epoch,
            train_size: r.train_size,
            train_loss: r.train_loss,
            val_metric: r.val_metric,
            snapshot: r.snapshot,
            phase_end: r.phase_end.map(|e| e.name().to_string()),
        }
    }
}

impl HistoryLine {
    pub fn to_record(&self) -> Result<EpochRecord, String> {
        let phase_end = match self.phase_end.as_deref() {
            None => None,
            Some(name) => Some(
                [PhaseEnd::Converged, PhaseEnd::EpochCap]
                    .into_iter()
                    .find(|e| e.name() == name)
                    .ok_or_else(|| format!("unknown phase end {name:?}"))?,
            ),
        };
        Ok(EpochRecord {
            phase: self.phase,
            buckets: self.buckets.clone(),
            epoch: self.epoch,
            global_epoch: self.global_epoch,
            train_size: self.train_size,
            train_loss: self.train_loss,
            val_metric: self.val_metric,
            snapshot: self.snapshot,
            phase_end,
        })
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub phase: usize,
    /// Newest bucket of the phase.
    pub bucket: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_time_s: f64,
}

/// Appends history and log lines as epochs finish, so an aborted run keeps
/// everything up to the failure.
pub struct RunLogs {
    history: File,
    log: File,
    started: Instant,
}

impl RunLogs {
    pub fn create(dir: &Path, provenance: &Provenance, regimen: RegimenKind, run: usize, run_seed: u64) -> anyhow::Result<Self> {
        let open = |name: &str| {
            let path = dir.join(name);
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))
        };
        let mut logs = RunLogs {
            history: open("history.jsonl")?,
            log: open("train_log.jsonl")?,
            started: Instant::now(),
        };
        let header = |format: &str| Header {
            format: format.into(),
            config_hash: provenance.config_hash.clone(),
            seed: provenance.seed,
            code_version: provenance.code_version.clone(),
            regimen: regimen.name().into(),
            run,
            run_seed,
        };
        write_line(&mut logs.history, &header(HISTORY_FORMAT))?;
        write_line(&mut logs.log, &header(LOG_FORMAT))?;
        Ok(logs)
    }

    pub fn record(&mut self, record: &EpochRecord) -> anyhow::Result<()> {
        write_line(&mut self.history, &HistoryLine::from(record))?;
        let line = LogLine {
            epoch: record.global_epoch,
            phase: record.phase,
            bucket: record.buckets.last().copied().unwrap_or(0),
            train_loss: record.train_loss,
            val_metric: record.val_metric,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write_line(&mut self.log, &line)
    }
}

fn write_line<T: Serialize>(file: &mut File, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    file.write_all(text.as_bytes()).context("cannot append to log")
}

/// Reads a history file back into its header and records.
pub fn load_history(path: &Path) -> Result<(Header, RegimenHistory), FormatError> {
    parse_history(&read_text(path)?)
}

pub fn parse_history(text: &str) -> Result<(Header, RegimenHistory), FormatError> {
    let mut lines = text.lines();
    let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| FormatError::syntax(1, format!("bad history header: {e}")))?;
    if header.format != HISTORY_FORMAT {
        return Err(FormatError::Magic {
            expected: "history",
            found: header.format,
        });
    }
    let regimen: RegimenKind = header.regimen.parse()?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let parsed: HistoryLine = serde_json::from_str(line).map_err(|e| FormatError::syntax(i + 2, e.to_string()))?;
        records.push(parsed.to_record().map_err(|e| FormatError::syntax(i + 2, e))?);
    }
    Ok((header, RegimenHistory { regimen, records }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(phase: usize, end: Option<PhaseEnd>) -> EpochRecord {
        EpochRecord {
            phase,
            buckets: (0..=phase).collect(),
            epoch: 3,
            global_epoch: 10 + phase,
            train_size: 40,
            train_loss: 0.1 + phase as f64 / 3.0,
            val_metric: 2.0f64.sqrt(),
            snapshot: phase % 2 == 0,
            phase_end: end,
        }
    }

    #[test]
    fn history_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new("abc", 2);
        let records = vec![record(0, None), record(1, Some(PhaseEnd::Converged)), record(2, Some(PhaseEnd::EpochCap))];
        {
            let mut logs = RunLogs::create(dir.path(), &prov, RegimenKind::BabySteps, 0, 9).unwrap();
            for r in &records {
                logs.record(r).unwrap();
            }
        }
        let (header, history) = load_history(&dir.path().join("history.jsonl")).unwrap();
        assert_eq!(header.run_seed, 9);
        assert_eq!(header.config_hash, "abc");
        assert_eq!(history.regimen, RegimenKind::BabySteps);
        assert_eq!(history.records, records);
        let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 4);
        let line: LogLine = serde_json::from_str(log.lines().nth(2).unwrap()).unwrap();
        assert_eq!((line.epoch, line.phase, line.bucket), (11, 1, 1));
    }

    #[test]
    fn bad_history_is_rejected() {
        assert!(parse_history("").is_err());
        assert!(parse_history("{\"format\":\"x\"}").is_err());
    }
}
