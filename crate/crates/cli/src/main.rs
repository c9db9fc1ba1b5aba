use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use curriculum_lstm::commands::{self, EvalInput, ProbeInput};
use curriculum_lstm::config::{parse_override, Config, Preset};
use curriculum_lstm_core::curriculum::RegimenKind;
use curriculum_lstm_core::model::Head;
use curriculum_lstm_core::sweep::SweepAxis;

/// Curriculum training of LSTMs on Digit Sum and labeled corpora.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base preset; defaults to desk.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Overrides a configuration key, e.g. `--set hidden=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

impl Common {
    fn resolve(&self) -> Result<Config> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?),
            None => None,
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        let preset = self.preset.map(|p| match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        });
        Ok(Config::resolve(preset, text.as_deref(), &overrides)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Regression,
    Classification,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Digit Sum dataset dump.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one regimen and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset dump, or a directory with a dump or labeled files.
        #[arg(long)]
        data: PathBuf,
    },
    /// Decode every hidden state of a trained model through its head.
    Probe {
        /// Checkpoint files; several summarize Δ across runs.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        /// Dataset dump, or a directory with a dump or labeled files.
        #[arg(long, required_unless_present = "sequence")]
        data: Option<PathBuf>,
        /// Token ids, e.g. "1 0 9 1 7".
        #[arg(long)]
        sequence: Option<String>,
        /// Split to use with --data: train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split or a single sequence.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset dump, or a directory with a dump or labeled files.
        #[arg(long, required_unless_present = "sequence")]
        data: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
        /// Split to use with --data: train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train a grid of (axis value, regimen) cells.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dataset dump, or a directory with a dump or labeled files.
        #[arg(long)]
        data: PathBuf,
        /// hidden_size or data_fraction.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated regimens.
        #[arg(long, value_delimiter = ',', default_value = "babysteps,onepass,sorted,nocl")]
        regimens: Vec<RegimenKind>,
        /// Cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compare backpropagation with central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value = "both")]
        head: HeadArg,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// First instance seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate { common } => commands::generate(&common.resolve()?, &common.out),
        Command::Train { common, data } => Ok(commands::train(&common.resolve()?, &data, &common.out)?.summary),
        Command::Probe {
            checkpoint,
            data,
            sequence,
            split,
            out,
        } => {
            let tokens = sequence.as_deref().map(commands::parse_sequence).transpose()?;
            let input = match (&tokens, &data) {
                (Some(t), _) => ProbeInput::Sequence(t),
                (None, Some(d)) => ProbeInput::Dataset { data: d, split: &split },
                (None, None) => unreachable!("clap requires --data or --sequence"),
            };
            commands::probe_cmd(&checkpoint, input, &out)
        }
        Command::Eval {
            checkpoint,
            data,
            sequence,
            split,
            out,
        } => {
            let tokens = sequence.as_deref().map(commands::parse_sequence).transpose()?;
            let input = match (&tokens, &data) {
                (Some(t), _) => EvalInput::Sequence(t),
                (None, Some(d)) => EvalInput::Dataset { data: d, split: &split },
                (None, None) => unreachable!("clap requires --data or --sequence"),
            };
            commands::eval(&checkpoint, input, &out)
        }
        Command::Sweep {
            common,
            data,
            axis,
            values,
            regimens,
            workers,
        } => {
            let config = common.resolve()?;
            Ok(commands::sweep(&config, &data, axis, &values, &regimens, workers, &common.out)?.2)
        }
        Command::Gradcheck {
            head,
            instances,
            seed,
            step,
            tolerance,
            out,
        } => {
            let classification = Head::Classification { classes: 3 };
            let heads = match head {
                HeadArg::Regression => vec![Head::Regression],
                HeadArg::Classification => vec![classification],
                HeadArg::Both => vec![Head::Regression, classification],
            };
            commands::gradcheck(&heads, instances, seed, step, tolerance, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
