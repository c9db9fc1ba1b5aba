//! Parameter checkpoints.
//!
//! UTF-8 text, `\n` line endings. The first line is `curriculum-lstm checkpoint 1`,
//! followed by `key value` lines in this order:
//!
//! ```text
//! code_version <string>
//! config_hash <64 hex digits>
//! seed <master seed>
//! run_seed <seed of the run that produced the parameters>
//! vocab <V>
//! embed <e>
//! hidden <n>
//! out_dim <1 for regression, K for classification>
//! head regression | head classification
//! bias learned | bias disabled
//! best_epoch <global epoch of the snapshot>
//! best_metric <validation metric of the snapshot>
//! config <L>
//! ```
//!
//! then the `L` lines of the canonical configuration, then four blocks
//! `matrix embed V e`, `matrix gates 4n e+n`, `vector gate_bias 4n` and
//! `matrix proj out_dim n`, each followed by its rows (one row per line for
//! matrices, one line for the vector), values separated by single spaces in
//! shortest round-trip decimal. The last line is `checksum <sha256>`, the
//! SHA-256 in lowercase hex of every byte before it.

use std::path::Path;

use curriculum_lstm_core::linalg::{Matrix, Vector};
use curriculum_lstm_core::model::{BiasMode, Head, LstmParams, ModelDims};

use crate::config::{Config, ConfigError};
use crate::format::{fmt_f64, parse_f64, read_text, sha256_hex, FormatError, Provenance};

pub const MAGIC: &str = "curriculum-lstm checkpoint 1";

/// Parameters plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LstmParams,
    pub provenance: Provenance,
    pub run_seed: u64,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub config: Config,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let d = &p.dims;
        let mut s = String::new();
        let mut line = |text: String| {
            s.push_str(&text);
            s.push('\n');
        };
        line(MAGIC.to_string());
        line(format!("code_version {}", self.provenance.code_version));
        line(format!("config_hash {}", self.provenance.config_hash));
        line(format!("seed {}", self.provenance.seed));
        line(format!("run_seed {}", self.run_seed));
        line(format!("vocab {}", d.vocab));
        line(format!("embed {}", d.embed));
        line(format!("hidden {}", d.hidden));
        line(format!("out_dim {}", d.out_dim()));
        line(match d.head {
            Head::Regression => "head regression".into(),
            Head::Classification { .. } => "head classification".into(),
        });
        line(match p.bias_mode {
            BiasMode::Learned => "bias learned".into(),
            BiasMode::Disabled => "bias disabled".into(),
        });
        line(format!("best_epoch {}", self.best_epoch));
        line(format!("best_metric {}", fmt_f64(self.best_metric)));
        let canonical = self.config.canonical();
        line(format!("config {}", canonical.lines().count()));
        for l in canonical.lines() {
            line(l.to_string());
        }
        for (name, m) in [("embed", &p.embed), ("gates", &p.gates)] {
            write_matrix(&mut line, name, m);
        }
        line(format!("vector gate_bias {}", p.gate_bias.len()));
        line(join(p.gate_bias.as_slice()));
        write_matrix(&mut line, "proj", &p.proj);
        let checksum = sha256_hex(s.as_bytes());
        s.push_str(&format!("checksum {checksum}\n"));
        s
    }

    pub fn parse(text: &str) -> Result<Checkpoint, FormatError> {
        let body_end = text
            .trim_end_matches('\n')
            .rfind('\n')
            .map(|i| i + 1)
            .ok_or_else(|| FormatError::syntax(1, "truncated checkpoint"))?;
        let (body, last) = text.split_at(body_end);
        let first = text.lines().next().unwrap_or("");
        if first != MAGIC {
            return Err(FormatError::Magic {
                expected: "checkpoint",
                found: first.to_string(),
            });
        }
        let stored = last
            .trim_end()
            .strip_prefix("checksum ")
            .ok_or_else(|| FormatError::syntax(body.lines().count() + 1, "missing checksum line"))?;
        let computed = sha256_hex(body.as_bytes());
        if stored != computed {
            return Err(FormatError::Checksum {
                stored: stored.to_string(),
                computed,
            });
        }

        let mut lines = Lines::new(body);
        lines.next()?;
        let code_version = lines.field("code_version")?.to_string();
        let config_hash = lines.field("config_hash")?.to_string();
        let seed = lines.number::<u64>("seed")?;
        let run_seed = lines.number::<u64>("run_seed")?;
        let vocab = lines.number::<usize>("vocab")?;
        let embed = lines.number::<usize>("embed")?;
        let hidden = lines.number::<usize>("hidden")?;
        let out_dim = lines.number::<usize>("out_dim")?;
        let head = match lines.field("head")? {
            "regression" if out_dim == 1 => Head::Regression,
            "classification" => Head::Classification { classes: out_dim },
            other => return Err(lines.error(format!("bad head {other:?} for out_dim {out_dim}"))),
        };
        let bias_mode = match lines.field("bias")? {
            "learned" => BiasMode::Learned,
            "disabled" => BiasMode::Disabled,
            other => return Err(lines.error(format!("bad bias mode {other:?}"))),
        };
        let best_epoch = lines.number::<usize>("best_epoch")?;
        let best_metric = parse_f64(lines.field("best_metric")?, lines.line)?;
        let config_lines = lines.number::<usize>("config")?;
        let mut config_text = String::new();
        for _ in 0..config_lines {
            config_text.push_str(lines.next()?);
            config_text.push('\n');
        }
        let config_line = lines.line;
        let mut config = Config::resolve(None, Some(&config_text), &[])
            .map_err(|e: ConfigError| FormatError::syntax(config_line, e.to_string()))?;
        config.experiment.seed = seed;
        if config.hash() != config_hash {
            return Err(FormatError::syntax(config_line, "embedded config does not match config_hash"));
        }

        let dims = ModelDims::new(vocab, embed, hidden, head);
        let embed_m = lines.matrix("embed", vocab, embed)?;
        let gates = lines.matrix("gates", 4 * hidden, embed + hidden)?;
        lines.header(&format!("vector gate_bias {}", 4 * hidden))?;
        let bias_line = lines.line + 1;
        let gate_bias = Vector::from_vec(lines.row(4 * hidden)?).map_err(|e| FormatError::syntax(bias_line, e.to_string()))?;
        let proj = lines.matrix("proj", out_dim, hidden)?;
        if lines.rest.next().is_some() {
            return Err(FormatError::syntax(lines.line + 1, "unexpected content before checksum"));
        }
        let params = LstmParams::from_parts(dims, bias_mode, embed_m, gates, gate_bias, proj)?;
        Ok(Checkpoint {
            params,
            provenance: Provenance {
                config_hash,
                seed,
                code_version,
            },
            run_seed,
            best_epoch,
            best_metric,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, FormatError> {
        Checkpoint::parse(&read_text(path)?)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

fn write_matrix(line: &mut impl FnMut(String), name: &str, m: &Matrix) {
    line(format!("matrix {name} {} {}", m.rows(), m.cols()));
    for r in 0..m.rows() {
        line(join(m.row(r)));
    }
}

struct Lines<'a> {
    rest: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            rest: text.lines(),
            line: 0,
        }
    }

    fn error(&self, message: String) -> FormatError {
        FormatError::syntax(self.line, message)
    }

    fn next(&mut self) -> Result<&'a str, FormatError> {
        self.line += 1;
        self.rest
            .next()
            .ok_or_else(|| FormatError::syntax(self.line, "unexpected end of checkpoint"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str, FormatError> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key} ...`, found {l:?}")))
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, FormatError> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.error(format!("bad {key} {v:?}")))
    }

    fn header(&mut self, expected: &str) -> Result<(), FormatError> {
        let l = self.next()?;
        if l == expected {
            Ok(())
        } else {
            Err(self.error(format!("expected {expected:?}, found {l:?}")))
        }
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>, FormatError> {
        let l = self.next()?;
        let line = self.line;
        let values = l
            .split(' ')
            .map(|t| parse_f64(t, line))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != len || values.iter().any(|x| !x.is_finite()) {
            return Err(self.error(format!("expected {len} finite values, found {}", values.len())));
        }
        Ok(values)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix, FormatError> {
        self.header(&format!("matrix {name} {rows} {cols}"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(Matrix::from_row_major(rows, cols, data)?)
    }
}
