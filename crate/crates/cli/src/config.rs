//! Flat `key = value` configuration files.
//!
//! Resolution order is preset, then file, then command-line overrides. Every
//! key always has a value, so [`Config::canonical`] is complete and its
//! SHA-256 ([`Config::hash`]) identifies a configuration. The master seed is
//! kept out of the hash; artifacts record it next to the hash.
//!
//! | key | values |
//! |---|---|
//! | `task` | `digit_sum`, `labeled` |
//! | `seqs_per_length`, `min_len`, `max_len`, `val_size`, `test_size` | integers |
//! | `embed`, `hidden` | integers |
//! | `bias` | `learned`, `disabled` |
//! | `regimen` | `babysteps`, `onepass`, `sorted`, `nocl` |
//! | `patience`, `runs`, `batch_size` | integers |
//! | `max_epochs_per_phase` | integer or `none` |
//! | `learning_rate`, `decay`, `epsilon`, `dropout` | numbers |
//! | `clip_norm` | number or `none` |
//! | `buckets` | `distinct` or `quantiles:Q` |
//! | `reset_optimizer` | `true`, `false` |
//! | `data_fraction` | number in (0, 1] |
//! | `separator` | label separator of labeled files |
//! | `vocab_policy` | `reject`, `unk` (held-out tokens missing from training) |
//!
//! A file may also set `preset` (first, before other keys take effect) and `seed`.

use std::fmt;
use std::str::FromStr;

use curriculum_lstm_core::curriculum::BucketPolicy;
use curriculum_lstm_core::dataset::{VocabPolicy, DEFAULT_SEPARATOR};
use curriculum_lstm_core::experiment::{ExperimentConfig, TaskKind};
use curriculum_lstm_core::model::BiasMode;

use crate::format::{fmt_f64, sha256_hex};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(ConfigError::BadValue {
                key: "preset".into(),
                value: s.into(),
                reason: "expected paper or desk".into(),
            }),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

/// Everything a command needs besides paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub experiment: ExperimentConfig,
    /// Fraction of each length bucket kept for training.
    pub data_fraction: f64,
    pub separator: String,
    /// Policy for held-out tokens that never occur in the training file.
    pub vocab_policy: VocabPolicy,
}

/// Hashed keys in canonical order.
pub const KEYS: [&str; 24] = [
    "task",
    "seqs_per_length",
    "min_len",
    "max_len",
    "val_size",
    "test_size",
    "embed",
    "hidden",
    "bias",
    "regimen",
    "patience",
    "max_epochs_per_phase",
    "runs",
    "learning_rate",
    "decay",
    "epsilon",
    "batch_size",
    "dropout",
    "clip_norm",
    "buckets",
    "reset_optimizer",
    "data_fraction",
    "separator",
    "vocab_policy",
];

impl Config {
    pub fn preset(preset: Preset) -> Self {
        let experiment = match preset {
            Preset::Paper => ExperimentConfig::paper(),
            Preset::Desk => ExperimentConfig::desk(),
        };
        Config {
            experiment,
            data_fraction: 1.0,
            separator: DEFAULT_SEPARATOR.to_string(),
            vocab_policy: VocabPolicy::ClosedReject,
        }
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed
    }

    /// Preset, then `file` entries, then `overrides`; `preset` defaults to desk.
    pub fn resolve(
        preset: Option<Preset>,
        file: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Config, ConfigError> {
        let entries = match file {
            Some(text) => parse_entries(text)?,
            None => Vec::new(),
        };
        let file_preset = entries
            .iter()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.parse::<Preset>())
            .transpose()?;
        let mut config = Config::preset(preset.or(file_preset).unwrap_or(Preset::Desk));
        for (key, value) in entries.iter().chain(overrides) {
            if key != "preset" {
                config.set(key, value)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: reason.into(),
        };
        let int = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        let num = || {
            value
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad("expected a finite number"))
        };
        let e = &mut self.experiment;
        match key {
            "seed" => e.seed = value.parse().map_err(|_| bad("expected an unsigned 64-bit integer"))?,
            "task" => {
                e.task = match value {
                    "digit_sum" => TaskKind::DigitSum,
                    "labeled" => TaskKind::Labeled,
                    _ => return Err(bad("expected digit_sum or labeled")),
                }
            }
            "seqs_per_length" => e.dataset.seqs_per_length = int()?,
            "min_len" => e.dataset.min_len = int()?,
            "max_len" => e.dataset.max_len = int()?,
            "val_size" => e.dataset.val_size = int()?,
            "test_size" => e.dataset.test_size = int()?,
            "embed" => e.embed = int()?,
            "hidden" => e.hidden = int()?,
            "bias" => {
                e.bias_mode = match value {
                    "learned" => BiasMode::Learned,
                    "disabled" => BiasMode::Disabled,
                    _ => return Err(bad("expected learned or disabled")),
                }
            }
            "regimen" => e.regimen = value.parse().map_err(|_| bad("expected babysteps, onepass, sorted or nocl"))?,
            "patience" => e.patience = int()?,
            "max_epochs_per_phase" => e.max_epochs_per_phase = optional(value, int)?,
            "runs" => e.runs = int()?,
            "learning_rate" => e.optimizer.learning_rate = num()?,
            "decay" => e.optimizer.decay = num()?,
            "epsilon" => e.optimizer.epsilon = num()?,
            "batch_size" => e.batch_size = int()?,
            "dropout" => e.dropout = num()?,
            "clip_norm" => e.clip_norm = optional(value, num)?,
            "buckets" => {
                e.bucket_policy = match value.split_once(':') {
                    None if value == "distinct" => BucketPolicy::DistinctScores,
                    Some(("quantiles", q)) => BucketPolicy::Quantiles(
                        q.parse().ok().filter(|&q| q > 0).ok_or_else(|| bad("expected quantiles:Q with Q > 0"))?,
                    ),
                    _ => return Err(bad("expected distinct or quantiles:Q")),
                }
            }
            "reset_optimizer" => e.reset_optimizer = value.parse().map_err(|_| bad("expected true or false"))?,
            "data_fraction" => self.data_fraction = num()?,
            "separator" => self.separator = value.to_string(),
            "vocab_policy" => {
                self.vocab_policy = match value {
                    "reject" => VocabPolicy::ClosedReject,
                    "unk" => VocabPolicy::ClosedUnk,
                    _ => return Err(bad("expected reject or unk")),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Canonical text of `key`'s value.
    pub fn get(&self, key: &str) -> Option<String> {
        let e = &self.experiment;
        let d = &e.dataset;
        Some(match key {
            "seed" => e.seed.to_string(),
            "task" => e.task.name().to_string(),
            "seqs_per_length" => d.seqs_per_length.to_string(),
            "min_len" => d.min_len.to_string(),
            "max_len" => d.max_len.to_string(),
            "val_size" => d.val_size.to_string(),
            "test_size" => d.test_size.to_string(),
            "embed" => e.embed.to_string(),
            "hidden" => e.hidden.to_string(),
            "bias" => match e.bias_mode {
                BiasMode::Learned => "learned".into(),
                BiasMode::Disabled => "disabled".into(),
            },
            "regimen" => e.regimen.name().to_string(),
            "patience" => e.patience.to_string(),
            "max_epochs_per_phase" => e.max_epochs_per_phase.map_or("none".into(), |m| m.to_string()),
            "runs" => e.runs.to_string(),
            "learning_rate" => fmt_f64(e.optimizer.learning_rate),
            "decay" => fmt_f64(e.optimizer.decay),
            "epsilon" => fmt_f64(e.optimizer.epsilon),
            "batch_size" => e.batch_size.to_string(),
            "dropout" => fmt_f64(e.dropout),
            "clip_norm" => e.clip_norm.map_or("none".into(), fmt_f64),
            "buckets" => match e.bucket_policy {
                BucketPolicy::DistinctScores => "distinct".into(),
                BucketPolicy::Quantiles(q) => format!("quantiles:{q}"),
            },
            "reset_optimizer" => e.reset_optimizer.to_string(),
            "data_fraction" => fmt_f64(self.data_fraction),
            "separator" => self.separator.clone(),
            "vocab_policy" => match self.vocab_policy {
                VocabPolicy::ClosedUnk => "unk".into(),
                _ => "reject".into(),
            },
            _ => return None,
        })
    }

    /// Every hashed key as `key = value`, one per line, in [`KEYS`] order.
    pub fn canonical(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// SHA-256 of [`Config::canonical`] in lowercase hex.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// First 16 hex digits of the hash, used in directory names.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// The resolved configuration as a loadable file, seed included.
    pub fn to_file_text(&self) -> String {
        format!(
            "# config_hash {}\n# code_version {}\nseed = {}\n{}",
            self.hash(),
            crate::CODE_VERSION,
            self.seed(),
            self.canonical()
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(ConfigError::Invalid("data_fraction must lie in (0, 1]".into()));
        }
        if self.separator.is_empty() || self.separator.chars().any(char::is_whitespace) {
            return Err(ConfigError::Invalid("separator must be non-empty without whitespace".into()));
        }
        Ok(())
    }
}

fn optional<T>(value: &str, parse: impl Fn() -> Result<T, ConfigError>) -> Result<Option<T>, ConfigError> {
    if value == "none" {
        Ok(None)
    } else {
        parse().map(Some)
    }
}

/// `key = value` entries of a config file, skipping blanks and `#` comments.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.into(),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            });
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `KEY=VALUE` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, found {s:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use curriculum_lstm_core::curriculum::RegimenKind;

    #[test]
    fn presets_differ_and_default_is_desk() {
        let desk = Config::resolve(None, None, &[]).unwrap();
        assert_eq!(desk, Config::preset(Preset::Desk));
        let paper = Config::preset(Preset::Paper);
        assert_eq!(paper.experiment.batch_size, 128);
        assert_eq!(paper.experiment.optimizer.learning_rate, 0.001);
        assert_eq!(paper.experiment.optimizer.decay, 0.9);
        assert_eq!(paper.experiment.patience, 10);
        assert_ne!(desk.hash(), paper.hash());
    }

    #[test]
    fn canonical_text_reloads_to_the_same_config() {
        let mut c = Config::preset(Preset::Paper);
        c.set("clip_norm", "5").unwrap();
        c.set("buckets", "quantiles:4").unwrap();
        c.set("seed", "99").unwrap();
        let back = Config::resolve(Some(Preset::Desk), Some(&c.to_file_text()), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn precedence_is_file_then_flags() {
        let file = "preset = paper\nhidden = 16\n# note\n\nregimen = nocl\n";
        let flags = vec![("hidden".to_string(), "2".to_string())];
        let c = Config::resolve(None, Some(file), &flags).unwrap();
        assert_eq!(c.experiment.hidden, 2);
        assert_eq!(c.experiment.regimen, RegimenKind::NoCl);
        assert_eq!(c.experiment.batch_size, 128);
        let forced = Config::resolve(Some(Preset::Desk), Some(file), &[]).unwrap();
        assert_eq!(forced.experiment.batch_size, 16);
    }

    #[test]
    fn seed_is_not_hashed() {
        let mut a = Config::preset(Preset::Desk);
        let h = a.hash();
        a.set("seed", "5").unwrap();
        assert_eq!(a.hash(), h);
        a.set("hidden", "5").unwrap();
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn errors() {
        assert!(matches!(Config::resolve(None, Some("colour = red"), &[]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(Config::resolve(None, Some("hidden 3"), &[]), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Config::resolve(None, Some("hidden = -3"), &[]), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::resolve(None, Some("dropout = 1.5"), &[]), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::resolve(None, Some("data_fraction = 0"), &[]), Err(ConfigError::Invalid(_))));
        assert!(Config::resolve(None, Some("preset = huge"), &[]).is_err());
        assert!(parse_override("novalue").is_err());
        assert_eq!(parse_override("a = b").unwrap(), ("a".into(), "b".into()));
    }
}
