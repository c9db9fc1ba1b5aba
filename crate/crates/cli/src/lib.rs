//! File formats, configuration files and command implementations for
//! [`curriculum_lstm_core`].
//!
//! Every artifact is plain text: checkpoints ([`checkpoint`]), dataset dumps
//! ([`dataset_file`]), JSONL training logs ([`history`]), probe tables
//! ([`probe_files`]) and sweep tables ([`sweep_table`]). Each one records the
//! configuration hash, the master seed and [`CODE_VERSION`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_file;
pub mod format;
pub mod history;
pub mod probe_files;
pub mod sweep_table;

/// Code version string embedded in every artifact.
pub const CODE_VERSION: &str = concat!("curriculum-lstm ", env!("CARGO_PKG_VERSION"));
