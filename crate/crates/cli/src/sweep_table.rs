//! Sweep results as tab-separated text.
//!
//! The file starts with `# curriculum-lstm sweep 1`, the provenance comment
//! lines and `# axis <hidden_size|data_fraction>`, then the column line
//! `axis_value regimen metric stddev runs status` and one row per cell in
//! sweep order. `metric` is empty for a failed cell; `status` is `ok` or
//! `failed: <message>` with tabs and newlines replaced by spaces.

use curriculum_lstm_core::sweep::{CellResult, CellStatus, ResultsTable, SweepAxis, SweepCell};

use crate::format::{comment_entry, fmt_f64, parse_f64, parse_usize, FormatError, Provenance};

pub const MAGIC: &str = "# curriculum-lstm sweep 1";
pub const COLUMNS: &str = "axis_value\tregimen\tmetric\tstddev\truns\tstatus";

pub fn to_text(table: &ResultsTable, provenance: &Provenance) -> String {
    let mut s = format!("{MAGIC}\n{}# axis {}\n{COLUMNS}\n", provenance.comment_lines(), table.axis);
    for row in &table.rows {
        let status = match &row.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Failed(msg) => format!("failed: {}", msg.replace(['\t', '\n', '\r'], " ")),
        };
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{status}\n",
            fmt_f64(row.cell.value),
            row.cell.regimen,
            row.metric.map_or(String::new(), fmt_f64),
            fmt_f64(row.stddev),
            row.runs
        ));
    }
    s
}

pub fn parse(text: &str) -> Result<(ResultsTable, Provenance), FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let first = lines.next().map_or("", |(_, l)| l);
    if first != MAGIC {
        return Err(FormatError::Magic {
            expected: "sweep table",
            found: first.to_string(),
        });
    }
    let mut entries = Vec::new();
    for (no, line) in lines.by_ref() {
        if line == COLUMNS {
            break;
        }
        entries.push(comment_entry(line).ok_or_else(|| FormatError::syntax(no, format!("bad header {line:?}")))?);
    }
    let axis: SweepAxis = entries
        .iter()
        .find(|(k, _)| *k == "axis")
        .ok_or_else(|| FormatError::syntax(1, "missing axis"))?
        .1
        .parse()?;
    let provenance =
        Provenance::from_entries(entries).ok_or_else(|| FormatError::syntax(1, "incomplete provenance header"))?;
    let mut rows = Vec::new();
    for (no, line) in lines {
        let cols: Vec<&str> = line.splitn(6, '\t').collect();
        if cols.len() != 6 {
            return Err(FormatError::syntax(no, "expected six columns"));
        }
        let status = match cols[5] {
            "ok" => CellStatus::Ok,
            s => CellStatus::Failed(
                s.strip_prefix("failed: ")
                    .ok_or_else(|| FormatError::syntax(no, format!("bad status {s:?}")))?
                    .to_string(),
            ),
        };
        rows.push(CellResult {
            cell: SweepCell {
                axis,
                value: parse_f64(cols[0], no)?,
                regimen: cols[1].parse()?,
            },
            metric: if cols[2].is_empty() { None } else { Some(parse_f64(cols[2], no)?) },
            stddev: parse_f64(cols[3], no)?,
            runs: parse_usize(cols[4], no)?,
            status,
        });
    }
    Ok((ResultsTable { axis, rows }, provenance))
}
