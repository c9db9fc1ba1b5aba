//! Probe outputs as tab-separated text.
//!
//! Every file starts with the provenance comment lines followed by a column
//! line. Numbers use shortest round-trip decimal.
//!
//! * Trace (one file per sequence): `t token probe oracle` for a regression
//!   head, with 1-based `t` and an empty `oracle` when none applies; a
//!   classifier writes `t token class p0 .. pK-1`.
//! * Δ series: `group index count mean variance`, where `group` is
//!   `position` (index = t) or `digit` (index = input token); the variance is
//!   taken across sequences.
//! * Δ across runs: `position runs mean variance`, the mean Δ per position of
//!   each checkpoint summarized across checkpoints.

use curriculum_lstm_core::model::Prediction;
use curriculum_lstm_core::probe::{DeltaSeries, ProbeTrace};

use crate::format::{comment_entry, fmt_f64, parse_f64, parse_usize, FormatError, Provenance};

pub fn trace_text(trace: &ProbeTrace, provenance: &Provenance) -> String {
    let mut s = provenance.comment_lines();
    match &trace.predictions[0] {
        Prediction::Scalar(_) => s.push_str("t\ttoken\tprobe\toracle\n"),
        Prediction::Distribution(p) => {
            s.push_str("t\ttoken\tclass");
            for k in 0..p.len() {
                s.push_str(&format!("\tp{k}"));
            }
            s.push('\n');
        }
    }
    for (i, (token, pred)) in trace.tokens.iter().zip(&trace.predictions).enumerate() {
        s.push_str(&format!("{}\t{token}", i + 1));
        match pred {
            Prediction::Scalar(v) => {
                let oracle = trace.oracle.as_ref().map_or(String::new(), |o| fmt_f64(o[i]));
                s.push_str(&format!("\t{}\t{oracle}", fmt_f64(*v)));
            }
            Prediction::Distribution(p) => {
                s.push_str(&format!("\t{}", pred.argmax().unwrap_or(0)));
                for x in p.iter() {
                    s.push_str(&format!("\t{}", fmt_f64(*x)));
                }
            }
        }
        s.push('\n');
    }
    s
}

/// A regression trace read back from [`trace_text`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrace {
    pub provenance: Provenance,
    pub tokens: Vec<usize>,
    pub probe: Vec<f64>,
    pub oracle: Vec<Option<f64>>,
}

pub fn parse_scalar_trace(text: &str) -> Result<ScalarTrace, FormatError> {
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    let mut columns = false;
    for (i, line) in text.lines().enumerate() {
        if !columns {
            if line == "t\ttoken\tprobe\toracle" {
                columns = true;
            } else {
                entries.push(comment_entry(line).ok_or_else(|| FormatError::syntax(i + 1, "expected a header"))?);
            }
            continue;
        }
        rows.push((i + 1, line));
    }
    if !columns {
        return Err(FormatError::syntax(1, "missing column line of a regression trace"));
    }
    let provenance =
        Provenance::from_entries(entries).ok_or_else(|| FormatError::syntax(1, "incomplete provenance header"))?;
    let mut out = ScalarTrace {
        provenance,
        tokens: Vec::new(),
        probe: Vec::new(),
        oracle: Vec::new(),
    };
    for (no, line) in rows {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 || parse_usize(cols[0], no)? != out.tokens.len() + 1 {
            return Err(FormatError::syntax(no, "bad trace row"));
        }
        out.tokens.push(parse_usize(cols[1], no)?);
        out.probe.push(parse_f64(cols[2], no)?);
        out.oracle.push(if cols[3].is_empty() { None } else { Some(parse_f64(cols[3], no)?) });
    }
    Ok(out)
}

pub fn delta_text(series: &DeltaSeries, provenance: &Provenance) -> String {
    let mut s = provenance.comment_lines();
    s.push_str("group\tindex\tcount\tmean\tvariance\n");
    let rows = series
        .by_position
        .iter()
        .enumerate()
        .map(|(k, m)| ("position", k + 2, m))
        .chain(series.by_digit.iter().enumerate().map(|(d, m)| ("digit", d, m)));
    for (group, index, m) in rows {
        s.push_str(&format!(
            "{group}\t{index}\t{}\t{}\t{}\n",
            m.count,
            fmt_f64(m.mean),
            fmt_f64(m.variance)
        ));
    }
    s
}

/// Mean and population variance across runs of each position's mean Δ.
pub fn delta_runs_text(runs: &[DeltaSeries], provenance: &Provenance) -> String {
    let mut s = provenance.comment_lines();
    s.push_str("position\truns\tmean\tvariance\n");
    let positions = runs.iter().map(|r| r.by_position.len()).max().unwrap_or(0);
    for k in 0..positions {
        let means: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.by_position.get(k))
            .filter(|m| m.count > 0)
            .map(|m| m.mean)
            .collect();
        let mean = curriculum_lstm_core::stats::mean(&means).unwrap_or(0.0);
        let var = curriculum_lstm_core::stats::variance(&means).unwrap_or(0.0);
        s.push_str(&format!("{}\t{}\t{}\t{}\n", k + 2, means.len(), fmt_f64(mean), fmt_f64(var)));
    }
    s
}
