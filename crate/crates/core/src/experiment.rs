//! End-to-end training runs driven by an [`ExperimentConfig`].

use alloc::format;
use alloc::vec::Vec;

use crate::curriculum::{
    self, BucketPolicy, Curriculum, EpochRecord, Goal, Learner, RegimenConfig, RegimenKind, RegimenOutcome,
};
use crate::dataset::SequenceExample;
use crate::dataset::{DatasetSplit, DigitSumConfig};
use crate::linalg::{derive_seed, Rng};
use crate::model::{BiasMode, Head, LstmParams, ModelDims};
use crate::stats;
use crate::train::{evaluate, Evaluation, LstmLearner, RmspropConfig, TrainConfig};
use crate::{Error, Result};

/// Seed streams derived from a run seed.
pub const INIT_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;
/// Stream of the master seed used for data-fraction subsampling.
pub const SUBSAMPLE_STREAM: u64 = 3;
/// Stream of the master seed used for dataset generation.
pub const DATASET_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Digit Sum regression.
    DigitSum,
    /// Classification over a labeled-sequence corpus.
    Labeled,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::DigitSum => "digit_sum",
            TaskKind::Labeled => "labeled",
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub dataset: DigitSumConfig,
    pub embed: usize,
    pub hidden: usize,
    pub bias_mode: BiasMode,
    pub regimen: RegimenKind,
    pub patience: usize,
    pub max_epochs_per_phase: Option<usize>,
    /// Number of No-CL repetitions.
    pub runs: usize,
    pub optimizer: RmspropConfig,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: Option<f64>,
    pub bucket_policy: BucketPolicy,
    pub reset_optimizer: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Full-size Digit Sum setup: 19k training sequences, RMSprop(0.001, 0.9),
    /// minibatches of 128, patience 10, no dropout, 10 No-CL runs.
    pub fn paper() -> Self {
        ExperimentConfig {
            task: TaskKind::DigitSum,
            dataset: DigitSumConfig::paper(),
            embed: 8,
            hidden: 8,
            bias_mode: BiasMode::Learned,
            regimen: RegimenKind::BabySteps,
            patience: 10,
            max_epochs_per_phase: None,
            runs: 10,
            optimizer: RmspropConfig::default(),
            batch_size: 128,
            dropout: 0.0,
            clip_norm: None,
            bucket_policy: BucketPolicy::DistinctScores,
            reset_optimizer: false,
            seed: 1,
        }
    }

    /// Ten times smaller training set, sized to run in minutes on one core.
    pub fn desk() -> Self {
        ExperimentConfig {
            dataset: DigitSumConfig::desk(),
            hidden: 4,
            embed: 4,
            optimizer: RmspropConfig {
                learning_rate: 0.01,
                ..RmspropConfig::default()
            },
            batch_size: 16,
            max_epochs_per_phase: Some(5000),
            runs: 5,
            ..ExperimentConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.embed == 0 || self.hidden == 0 {
            return bad("embed and hidden sizes must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && (0.0..1.0).contains(&o.decay) && o.epsilon > 0.0) {
            return bad("invalid optimizer parameters");
        }
        if self.max_epochs_per_phase == Some(0) {
            return bad("max epochs per phase must be positive");
        }
        if self.task == TaskKind::DigitSum {
            self.dataset.validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            dropout: self.dropout,
            clip_norm: self.clip_norm,
        }
    }

    pub fn regimen_config(&self, seed: u64) -> RegimenConfig {
        RegimenConfig {
            patience: self.patience,
            max_epochs_per_phase: self.max_epochs_per_phase,
            seed,
            reset_optimizer: self.reset_optimizer,
        }
    }

    /// Seed for generating this experiment's Digit Sum data.
    pub fn dataset_seed(&self) -> u64 {
        derive_seed(self.seed, DATASET_STREAM)
    }

    pub fn model_dims(&self, split: &DatasetSplit) -> ModelDims {
        ModelDims::new(split.vocab_size, self.embed, self.hidden, split.head())
    }

    fn check_split(&self, split: &DatasetSplit) -> Result<()> {
        let want = match self.task {
            TaskKind::DigitSum => matches!(split.head(), Head::Regression),
            TaskKind::Labeled => matches!(split.head(), Head::Classification { .. }),
        };
        if !want {
            return Err(Error::TaskMismatch("dataset targets do not match the configured task"));
        }
        if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    /// Fresh learner for a run seed.
    pub fn learner(&self, split: &DatasetSplit, run_seed: u64) -> Result<LstmLearner> {
        let mut init_rng = Rng::new(derive_seed(run_seed, INIT_STREAM));
        let params = LstmParams::init(self.model_dims(split), self.bias_mode, &mut init_rng)?;
        Ok(LstmLearner::new(
            params,
            self.optimizer,
            self.train_config(),
            derive_seed(run_seed, DROPOUT_STREAM),
        ))
    }
}

/// Test-set metric: MSE for regression, accuracy for classification.
pub fn test_metric(eval: &Evaluation) -> f64 {
    eval.accuracy.unwrap_or(eval.mean_loss)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub outcome: RegimenOutcome<LstmParams>,
    /// Evaluation of the best-on-validation snapshot on the test set.
    pub test: Evaluation,
}

impl RunResult {
    pub fn test_metric(&self) -> f64 {
        test_metric(&self.test)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub regimen: RegimenKind,
    pub runs: Vec<RunResult>,
    pub test_mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub test_stddev: f64,
}

impl ExperimentOutcome {
    /// The first run's best model.
    pub fn best_params(&self) -> &LstmParams {
        &self.runs[0].outcome.best
    }
}

/// Progress callbacks of [`run_experiment_observed`]; any error aborts the experiment.
pub trait ExperimentObserver {
    fn run_started(&mut self, _run: usize, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn epoch(&mut self, _run: usize, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    fn run_finished(&mut self, _run: usize, _result: &RunResult) -> Result<()> {
        Ok(())
    }
}

impl ExperimentObserver for () {}

struct Observed<'a> {
    inner: LstmLearner,
    observer: &'a mut dyn ExperimentObserver,
    run: usize,
}

impl Learner for Observed<'_> {
    type Snapshot = LstmParams;

    fn goal(&self) -> Goal {
        self.inner.goal()
    }

    fn train_epoch(&mut self, data: &[&SequenceExample]) -> Result<f64> {
        self.inner.train_epoch(data)
    }

    fn validate(&mut self, validation: &[SequenceExample]) -> Result<f64> {
        self.inner.validate(validation)
    }

    fn snapshot(&self) -> LstmParams {
        self.inner.snapshot()
    }

    fn reset_optimizer(&mut self) {
        self.inner.reset_optimizer()
    }

    fn on_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.observer.epoch(self.run, record)
    }
}

/// Trains `config.regimen` on `split` and evaluates the best snapshot(s) on the test set.
pub fn run_experiment(config: &ExperimentConfig, split: &DatasetSplit) -> Result<ExperimentOutcome> {
    run_experiment_observed(config, split, &mut ())
}

/// [`run_experiment`] reporting every run and epoch to `observer` as it happens.
///
/// No-CL run `i` uses seed [`curriculum::no_cl_run_seed`]`(config.seed, i)`;
/// every other regimen is a single run with `config.seed`.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    observer: &mut dyn ExperimentObserver,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    config.check_split(split)?;
    let curriculum = Curriculum::Length;
    let seeds: Vec<u64> = match config.regimen {
        RegimenKind::NoCl => (0..config.runs).map(|i| curriculum::no_cl_run_seed(config.seed, i)).collect(),
        _ => alloc::vec![config.seed],
    };
    let mut runs = Vec::with_capacity(seeds.len());
    for (index, &seed) in seeds.iter().enumerate() {
        observer.run_started(index, seed)?;
        let mut learner = Observed {
            inner: config.learner(split, seed)?,
            observer: &mut *observer,
            run: index,
        };
        let outcome = curriculum::run_regimen(
            config.regimen,
            &mut learner,
            &split.train,
            &curriculum,
            config.bucket_policy,
            &split.validation,
            &config.regimen_config(seed),
        )?;
        let test = evaluate(&outcome.best, &split.test)?;
        let result = RunResult { seed, outcome, test };
        observer.run_finished(index, &result)?;
        runs.push(result);
    }
    let metrics: Vec<f64> = runs.iter().map(RunResult::test_metric).collect();
    let test_mean = stats::mean(&metrics).ok_or_else(|| Error::InvalidArgument(format!(
        "no runs for {}",
        config.regimen
    )))?;
    Ok(ExperimentOutcome {
        regimen: config.regimen,
        test_stddev: stats::sample_stddev(&metrics),
        test_mean,
        runs,
    })
}
