//! Shared pieces of the text formats: number encoding, checksums, provenance headers.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Errors raised while reading any of the crate's file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("not a {expected} file (first line {found:?})")]
    Magic { expected: &'static str, found: String },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Core(#[from] curriculum_lstm_core::Error),
}

impl FormatError {
    pub fn syntax(line: usize, message: impl Into<String>) -> Self {
        FormatError::Syntax {
            line,
            message: message.into(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest decimal text that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse_f64(text: &str, line: usize) -> Result<f64, FormatError> {
    text.trim()
        .parse()
        .map_err(|_| FormatError::syntax(line, format!("{text:?} is not a number")))
}

pub fn parse_usize(text: &str, line: usize) -> Result<usize, FormatError> {
    text.trim()
        .parse()
        .map_err(|_| FormatError::syntax(line, format!("{text:?} is not a non-negative integer")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// The triple every artifact carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            config_hash: config_hash.into(),
            seed,
            code_version: crate::CODE_VERSION.to_string(),
        }
    }

    /// `# key value` lines for the head of a delimited-text file.
    pub fn comment_lines(&self) -> String {
        format!(
            "# config_hash {}\n# seed {}\n# code_version {}\n",
            self.config_hash, self.seed, self.code_version
        )
    }

    /// Reads back the lines written by [`Provenance::comment_lines`] from a
    /// sequence of `(key, value)` header entries.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Option<Self> {
        let (mut hash, mut seed, mut version) = (None, None, None);
        for (k, v) in entries {
            match k {
                "config_hash" => hash = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                "code_version" => version = Some(v.to_string()),
                _ => {}
            }
        }
        Some(Provenance {
            config_hash: hash?,
            seed: seed?,
            code_version: version?,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "code_version": self.code_version,
        })
    }
}

/// Splits `# key value` into `(key, value)`.
pub fn comment_entry(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix('#')?.trim_start();
    Some(rest.split_once(' ').unwrap_or((rest, "")))
}

/// Writes `contents` to `path`, naming the path in any error.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    use anyhow::Context as _;
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}
