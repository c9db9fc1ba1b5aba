//! Hidden-size and training-fraction sweeps over regimens.
//!
//! A sweep is a list of independent [`SweepCell`]s. [`run_cell`] runs one of
//! them; callers may execute cells in any order or in parallel and assemble
//! the [`ResultsTable`] afterwards.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::curriculum::{Curriculum, RegimenKind};
use crate::dataset::{subsample_fraction, DatasetSplit};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, SUBSAMPLE_STREAM};
use crate::linalg::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Hidden units (the embedding size follows the hidden size).
    HiddenSize,
    /// Fraction of the training set kept, stratified by length.
    DataFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::HiddenSize => "hidden_size",
            SweepAxis::DataFraction => "data_fraction",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden_size" | "hidden" => Ok(SweepAxis::HiddenSize),
            "data_fraction" | "fraction" => Ok(SweepAxis::DataFraction),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: f64,
    pub regimen: RegimenKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: SweepCell,
    /// Mean test metric over runs; `None` when the cell failed.
    pub metric: Option<f64>,
    pub stddev: f64,
    pub runs: usize,
    pub status: CellStatus,
}

impl CellResult {
    pub fn from_outcome(cell: SweepCell, outcome: &ExperimentOutcome) -> Self {
        CellResult {
            cell,
            metric: Some(outcome.test_mean),
            stddev: outcome.test_stddev,
            runs: outcome.runs.len(),
            status: CellStatus::Ok,
        }
    }

    pub fn failed(cell: SweepCell, err: &Error) -> Self {
        CellResult {
            cell,
            metric: None,
            stddev: 0.0,
            runs: 0,
            status: CellStatus::Failed(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub axis: SweepAxis,
    pub rows: Vec<CellResult>,
}

impl ResultsTable {
    pub fn get(&self, value: f64, regimen: RegimenKind) -> Option<&CellResult> {
        self.rows
            .iter()
            .find(|r| r.cell.value == value && r.cell.regimen == regimen)
    }
}

/// Cells in axis-major order.
pub fn sweep_cells(axis: SweepAxis, values: &[f64], regimens: &[RegimenKind]) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one axis value".into()));
    }
    if regimens.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one regimen".into()));
    }
    for &v in values {
        let ok = match axis {
            SweepAxis::HiddenSize => v >= 1.0 && libm::trunc(v) == v,
            SweepAxis::DataFraction => v > 0.0 && v <= 1.0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid {axis} value {v}")));
        }
    }
    Ok(values
        .iter()
        .flat_map(|&value| regimens.iter().map(move |&regimen| SweepCell { axis, value, regimen }))
        .collect())
}

/// The configuration and data one cell trains on.
pub fn cell_setup(
    cell: &SweepCell,
    base: &ExperimentConfig,
    split: &DatasetSplit,
) -> Result<(ExperimentConfig, DatasetSplit)> {
    let mut config = base.clone();
    config.regimen = cell.regimen;
    match cell.axis {
        SweepAxis::HiddenSize => {
            config.hidden = cell.value as usize;
            config.embed = cell.value as usize;
            Ok((config, split.clone()))
        }
        SweepAxis::DataFraction => {
            let seed = derive_seed(base.seed, SUBSAMPLE_STREAM);
            let sub = subsample_fraction(split, cell.value, &Curriculum::Length, seed)?;
            Ok((config, sub.split))
        }
    }
}

pub fn run_cell(cell: &SweepCell, base: &ExperimentConfig, split: &DatasetSplit) -> Result<ExperimentOutcome> {
    let (config, data) = cell_setup(cell, base, split)?;
    run_experiment(&config, &data)
}

fn sweep(
    axis: SweepAxis,
    values: &[f64],
    regimens: &[RegimenKind],
    split: &DatasetSplit,
    config: &ExperimentConfig,
) -> Result<ResultsTable> {
    let rows = sweep_cells(axis, values, regimens)?
        .into_iter()
        .map(|cell| match run_cell(&cell, config, split) {
            Ok(out) => CellResult::from_outcome(cell, &out),
            Err(e) => CellResult::failed(cell, &e),
        })
        .collect();
    Ok(ResultsTable { axis, rows })
}

/// Final test metric per (hidden size, regimen), run sequentially.
pub fn sweep_hidden_sizes(
    sizes: &[usize],
    regimens: &[RegimenKind],
    split: &DatasetSplit,
    config: &ExperimentConfig,
) -> Result<ResultsTable> {
    let values: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    sweep(SweepAxis::HiddenSize, &values, regimens, split, config)
}

/// Final test metric per (training fraction, regimen), run sequentially.
pub fn sweep_data_fractions(
    fractions: &[f64],
    regimens: &[RegimenKind],
    split: &DatasetSplit,
    config: &ExperimentConfig,
) -> Result<ResultsTable> {
    sweep(SweepAxis::DataFraction, fractions, regimens, split, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_digit_sum, DigitSumConfig};

    fn tiny() -> (ExperimentConfig, DatasetSplit) {
        let mut cfg = ExperimentConfig::desk();
        cfg.dataset = DigitSumConfig::new(10, 2, 4, 5, 5);
        cfg.patience = 1;
        cfg.max_epochs_per_phase = Some(3);
        cfg.runs = 2;
        let split = generate_digit_sum(&cfg.dataset, 3);
        (cfg, split)
    }

    #[test]
    fn cell_enumeration() {
        let cells = sweep_cells(SweepAxis::DataFraction, &[0.1, 0.25, 0.5, 1.0], &RegimenKind::ALL).unwrap();
        assert_eq!(cells.len(), 16);
        let sizes: Vec<f64> = (1..=9).map(|k| (1u32 << k) as f64).collect();
        assert_eq!(sizes.last(), Some(&512.0));
        assert_eq!(sweep_cells(SweepAxis::HiddenSize, &sizes, &[RegimenKind::BabySteps]).unwrap().len(), 9);
        assert!(sweep_cells(SweepAxis::HiddenSize, &[4.0], &[]).is_err());
        assert!(sweep_cells(SweepAxis::HiddenSize, &[], &[RegimenKind::NoCl]).is_err());
        assert!(sweep_cells(SweepAxis::DataFraction, &[0.0], &[RegimenKind::NoCl]).is_err());
        assert!(sweep_cells(SweepAxis::HiddenSize, &[2.5], &[RegimenKind::NoCl]).is_err());
    }

    #[test]
    fn single_cell_matches_plain_run() {
        let (cfg, split) = tiny();
        let table = sweep_hidden_sizes(&[3], &[RegimenKind::BabySteps], &split, &cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        let mut direct = cfg.clone();
        direct.hidden = 3;
        direct.embed = 3;
        direct.regimen = RegimenKind::BabySteps;
        let out = run_experiment(&direct, &split).unwrap();
        assert_eq!(table.rows[0].metric, Some(out.test_mean));
    }

    #[test]
    fn full_fraction_matches_unswept_run() {
        let (cfg, split) = tiny();
        let table = sweep_data_fractions(&[1.0], &[RegimenKind::NoCl], &split, &cfg).unwrap();
        let out = run_experiment(&ExperimentConfig { regimen: RegimenKind::NoCl, ..cfg.clone() }, &split).unwrap();
        let row = table.get(1.0, RegimenKind::NoCl).unwrap();
        assert_eq!(row.metric, Some(out.test_mean));
        assert_eq!(row.runs, 2);
        assert!(sweep_data_fractions(&[0.5], &[], &split, &cfg).is_err());
    }

    #[test]
    fn failures_are_recorded() {
        let (mut cfg, split) = tiny();
        cfg.dropout = 2.0;
        let table = sweep_hidden_sizes(&[2, 3], &[RegimenKind::Sorted], &split, &cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| matches!(r.status, CellStatus::Failed(_)) && r.metric.is_none()));
    }
}
