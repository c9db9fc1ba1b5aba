//! Curriculum scoring, bucketing and the four training regimens.
//!
//! * One-Pass trains to convergence on bucket 1, then on bucket 2 alone, and
//!   so on: each bucket is used once.
//! * Baby Steps trains on buckets `1..=s` at phase `s`, so the training set
//!   grows until it is the whole set.
//! * Sorted trains one phase on the whole set, iterated in ascending score
//!   order with ties shuffled every epoch.
//! * No-CL trains one phase on the whole set reshuffled every epoch, usually
//!   repeated over several derived seeds.
//!
//! A phase ends when the validation metric has not strictly improved for
//! `patience` consecutive epochs (the first epoch of a phase always counts as
//! an improvement). Parameters carry over between phases; the returned model
//! is the best-on-validation snapshot over the whole run.
//!
//! The engine only talks to a [`Learner`], so it can be driven by a stub that
//! records what data it was shown.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::dataset::SequenceExample;
use crate::linalg::{derive_seed, Rng};
use crate::stats;
use crate::{Error, Result};

/// Difficulty score of an example; lower is easier.
#[derive(Clone, Copy)]
pub enum Curriculum {
    /// Number of tokens.
    Length,
    Custom(fn(&SequenceExample) -> f64),
}

impl Curriculum {
    pub fn score(&self, example: &SequenceExample) -> f64 {
        match self {
            Curriculum::Length => example.len() as f64,
            Curriculum::Custom(f) => f(example),
        }
    }
}

impl fmt::Debug for Curriculum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curriculum::Length => f.write_str("Length"),
            Curriculum::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// How sorted examples are cut into buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BucketPolicy {
    /// One bucket per distinct score.
    #[default]
    DistinctScores,
    /// At most `q` buckets of roughly equal size; equal scores never straddle a cut.
    Quantiles(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub min_score: f64,
    pub max_score: f64,
    /// Indices into the training data, in stable score order.
    pub members: Vec<usize>,
}

/// Ordered, disjoint, score-separated buckets covering the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSet {
    pub buckets: Vec<Bucket>,
}

impl BucketSet {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.members.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.members.len()).sum()
    }
}

/// Stable-sorts `data` by score and partitions it per `policy`.
pub fn build_buckets(
    data: &[SequenceExample],
    curriculum: &Curriculum,
    policy: BucketPolicy,
) -> Result<BucketSet> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores: Vec<f64> = data.iter().map(|e| curriculum.score(e)).collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "curriculum score",
            detail: format!("example {i}"),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Runs of equal score.
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for idx in order {
        match runs.last_mut() {
            Some(run) if scores[run[0]] == scores[idx] => run.push(idx),
            _ => runs.push(vec![idx]),
        }
    }

    let groups: Vec<Vec<usize>> = match policy {
        BucketPolicy::DistinctScores => runs,
        BucketPolicy::Quantiles(0) => {
            return Err(Error::InvalidArgument("quantile bucket count must be positive".into()))
        }
        BucketPolicy::Quantiles(q) => {
            let target = data.len().div_ceil(q);
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut current: Vec<usize> = Vec::new();
            for run in runs {
                current.extend(run);
                if current.len() >= target {
                    groups.push(core::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                groups.push(current);
            }
            groups
        }
    };

    let buckets = groups
        .into_iter()
        .map(|members| Bucket {
            min_score: scores[members[0]],
            max_score: scores[*members.last().unwrap()],
            members,
        })
        .collect();
    Ok(BucketSet { buckets })
}

/// Whether a larger or smaller validation metric is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

impl Goal {
    pub fn is_better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Goal::Minimize => candidate < incumbent,
            Goal::Maximize => candidate > incumbent,
        }
    }
}

/// Result of feeding one validation metric to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// Strict improvement; the counter was reset.
    Improved,
    Continue,
    /// `patience` consecutive non-improving epochs.
    StopPhase,
}

/// Patience counter for one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    goal: Goal,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, goal: Goal) -> Result<Self> {
        if patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        Ok(EarlyStopping {
            patience,
            goal,
            best: None,
            since_best: 0,
        })
    }

    pub fn converged(&mut self, metric: f64) -> Convergence {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some(best) => self.goal.is_better(metric, best),
        };
        if improved {
            self.best = Some(metric);
            self.since_best = 0;
            return Convergence::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Convergence::StopPhase
        } else {
            Convergence::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_best(&self) -> usize {
        self.since_best
    }

    pub fn patience(&self) -> usize {
        self.patience
    }
}

/// Anything the regimen engine can train.
pub trait Learner {
    type Snapshot: Clone;

    fn goal(&self) -> Goal;

    /// One epoch over `data` in exactly the given order; returns the mean training loss.
    fn train_epoch(&mut self, data: &[&SequenceExample]) -> Result<f64>;

    fn validate(&mut self, validation: &[SequenceExample]) -> Result<f64>;

    fn snapshot(&self) -> Self::Snapshot;

    /// Clears optimizer state; called between phases when configured.
    fn reset_optimizer(&mut self) {}

    /// Called with every epoch record as soon as it is complete; an error aborts the run.
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimenKind {
    OnePass,
    BabySteps,
    Sorted,
    NoCl,
}

impl RegimenKind {
    pub const ALL: [RegimenKind; 4] = [
        RegimenKind::BabySteps,
        RegimenKind::OnePass,
        RegimenKind::Sorted,
        RegimenKind::NoCl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimenKind::OnePass => "onepass",
            RegimenKind::BabySteps => "babysteps",
            RegimenKind::Sorted => "sorted",
            RegimenKind::NoCl => "nocl",
        }
    }
}

impl fmt::Display for RegimenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "onepass" => Ok(RegimenKind::OnePass),
            "babysteps" | "babystep" => Ok(RegimenKind::BabySteps),
            "sorted" => Ok(RegimenKind::Sorted),
            "nocl" => Ok(RegimenKind::NoCl),
            _ => Err(Error::InvalidArgument(format!("unknown regimen {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimenConfig {
    pub patience: usize,
    /// Safety cap on the epochs of a single phase.
    pub max_epochs_per_phase: Option<usize>,
    /// Seeds the per-epoch ordering.
    pub seed: u64,
    /// Clear optimizer state at each phase boundary.
    pub reset_optimizer: bool,
}

impl RegimenConfig {
    pub fn new(patience: usize, seed: u64) -> Self {
        RegimenConfig {
            patience,
            max_epochs_per_phase: None,
            seed,
            reset_optimizer: false,
        }
    }
}

/// Why a phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseEnd {
    Converged,
    EpochCap,
}

impl PhaseEnd {
    pub fn name(self) -> &'static str {
        match self {
            PhaseEnd::Converged => "converged",
            PhaseEnd::EpochCap => "epoch_cap",
        }
    }
}

/// One training epoch of a regimen run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 0-based phase index.
    pub phase: usize,
    /// 0-based ids of the buckets in the active training set.
    pub buckets: Vec<usize>,
    /// 0-based epoch within the phase.
    pub epoch: usize,
    pub global_epoch: usize,
    pub train_size: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    /// A new best-on-validation snapshot was taken after this epoch.
    pub snapshot: bool,
    /// Set on the last epoch of a phase.
    pub phase_end: Option<PhaseEnd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimenHistory {
    pub regimen: RegimenKind,
    pub records: Vec<EpochRecord>,
}

impl RegimenHistory {
    pub fn phase_count(&self) -> usize {
        self.records.last().map_or(0, |r| r.phase + 1)
    }

    pub fn phase(&self, phase: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn epochs_per_phase(&self) -> Vec<usize> {
        let mut out = vec![0; self.phase_count()];
        for r in &self.records {
            out[r.phase] += 1;
        }
        out
    }
}

/// Trained model of a run: the best snapshot plus the final parameters.
#[derive(Debug, Clone)]
pub struct RegimenOutcome<S> {
    pub best: S,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub last: S,
    pub history: RegimenHistory,
}

enum Ordering {
    Shuffle(Vec<usize>),
    /// Groups in ascending score; shuffled within each group.
    SortedTies(Vec<Vec<usize>>),
}

struct Phase {
    buckets: Vec<usize>,
    ordering: Ordering,
}

fn run_phases<L: Learner>(
    learner: &mut L,
    data: &[SequenceExample],
    phases: Vec<Phase>,
    validation: &[SequenceExample],
    config: &RegimenConfig,
    regimen: RegimenKind,
) -> Result<RegimenOutcome<L::Snapshot>> {
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let goal = learner.goal();
    let mut rng = Rng::new(config.seed);
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, L::Snapshot)> = None;
    let mut global_epoch = 0usize;

    for (phase_idx, phase) in phases.into_iter().enumerate() {
        if phase_idx > 0 && config.reset_optimizer {
            learner.reset_optimizer();
        }
        let mut stopper = EarlyStopping::new(config.patience, goal)?;
        let mut order: Vec<usize> = Vec::new();
        let mut epoch = 0usize;
        loop {
            order.clear();
            match &phase.ordering {
                Ordering::Shuffle(members) => {
                    order.extend_from_slice(members);
                    rng.shuffle(&mut order);
                }
                Ordering::SortedTies(groups) => {
                    for g in groups {
                        let start = order.len();
                        order.extend_from_slice(g);
                        rng.shuffle(&mut order[start..]);
                    }
                }
            }
            let batch: Vec<&SequenceExample> = order.iter().map(|&i| &data[i]).collect();
            let train_loss = learner.train_epoch(&batch)?;
            let val_metric = learner.validate(validation)?;

            let global_improved = match &best {
                None => !val_metric.is_nan(),
                Some((m, _, _)) => goal.is_better(val_metric, *m),
            };
            if global_improved {
                best = Some((val_metric, global_epoch, learner.snapshot()));
            }
            let status = stopper.converged(val_metric);
            epoch += 1;
            let phase_end = if status == Convergence::StopPhase {
                Some(PhaseEnd::Converged)
            } else if config.max_epochs_per_phase.is_some_and(|cap| epoch >= cap) {
                Some(PhaseEnd::EpochCap)
            } else {
                None
            };
            records.push(EpochRecord {
                phase: phase_idx,
                buckets: phase.buckets.clone(),
                epoch: epoch - 1,
                global_epoch,
                train_size: order.len(),
                train_loss,
                val_metric,
                snapshot: global_improved,
                phase_end,
            });
            learner.on_epoch(records.last().expect("just pushed"))?;
            global_epoch += 1;
            if phase_end.is_some() {
                break;
            }
        }
    }

    let last = learner.snapshot();
    let (best_metric, best_epoch, best) = best.ok_or_else(|| Error::NonFinite {
        what: "validation metric",
        detail: "no epoch produced a comparable metric".into(),
    })?;
    Ok(RegimenOutcome {
        best,
        best_metric,
        best_epoch,
        last,
        history: RegimenHistory { regimen, records },
    })
}

fn check_buckets(data: &[SequenceExample], buckets: &BucketSet) -> Result<()> {
    if buckets.is_empty() || buckets.buckets.iter().any(|b| b.members.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = buckets
        .buckets
        .iter()
        .flat_map(|b| &b.members)
        .find(|&&i| i >= data.len())
    {
        return Err(Error::InvalidArgument(format!("bucket member {bad} out of range")));
    }
    Ok(())
}

/// Trains on each bucket alone, easiest first.
pub fn run_one_pass<L: Learner>(
    learner: &mut L,
    data: &[SequenceExample],
    buckets: &BucketSet,
    validation: &[SequenceExample],
    config: &RegimenConfig,
) -> Result<RegimenOutcome<L::Snapshot>> {
    check_buckets(data, buckets)?;
    let phases = buckets
        .buckets
        .iter()
        .enumerate()
        .map(|(s, b)| Phase {
            buckets: vec![s],
            ordering: Ordering::Shuffle(b.members.clone()),
        })
        .collect();
    run_phases(learner, data, phases, validation, config, RegimenKind::OnePass)
}

/// Trains on the growing union of buckets `1..=s`.
pub fn run_baby_steps<L: Learner>(
    learner: &mut L,
    data: &[SequenceExample],
    buckets: &BucketSet,
    validation: &[SequenceExample],
    config: &RegimenConfig,
) -> Result<RegimenOutcome<L::Snapshot>> {
    check_buckets(data, buckets)?;
    let mut active: Vec<usize> = Vec::new();
    let mut phases = Vec::with_capacity(buckets.len());
    for (s, b) in buckets.buckets.iter().enumerate() {
        active.extend_from_slice(&b.members);
        phases.push(Phase {
            buckets: (0..=s).collect(),
            ordering: Ordering::Shuffle(active.clone()),
        });
    }
    run_phases(learner, data, phases, validation, config, RegimenKind::BabySteps)
}

/// Full data every epoch in ascending score order, ties shuffled.
pub fn run_sorted<L: Learner>(
    learner: &mut L,
    data: &[SequenceExample],
    curriculum: &Curriculum,
    validation: &[SequenceExample],
    config: &RegimenConfig,
) -> Result<RegimenOutcome<L::Snapshot>> {
    let buckets = build_buckets(data, curriculum, BucketPolicy::DistinctScores)?;
    let phase = Phase {
        buckets: (0..buckets.len()).collect(),
        ordering: Ordering::SortedTies(buckets.buckets.into_iter().map(|b| b.members).collect()),
    };
    run_phases(learner, data, vec![phase], validation, config, RegimenKind::Sorted)
}

/// One conventional run: full data, reshuffled every epoch.
pub fn run_shuffled<L: Learner>(
    learner: &mut L,
    data: &[SequenceExample],
    validation: &[SequenceExample],
    config: &RegimenConfig,
) -> Result<RegimenOutcome<L::Snapshot>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let phase = Phase {
        buckets: vec![0],
        ordering: Ordering::Shuffle((0..data.len()).collect()),
    };
    run_phases(learner, data, vec![phase], validation, config, RegimenKind::NoCl)
}

/// Repeated No-CL runs.
#[derive(Debug, Clone)]
pub struct NoClOutcome<S> {
    pub seeds: Vec<u64>,
    pub runs: Vec<RegimenOutcome<S>>,
    pub mean_metric: f64,
    /// Sample standard deviation of the per-run best validation metrics.
    pub stddev_metric: f64,
}

/// Seed of No-CL run `run` under `master`.
pub fn no_cl_run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

/// `runs` No-CL runs; run `i` uses seed [`no_cl_run_seed`]`(config.seed, i)`
/// both for the learner (through `factory`) and for shuffling.
pub fn run_no_cl<L, F>(
    factory: F,
    data: &[SequenceExample],
    validation: &[SequenceExample],
    config: &RegimenConfig,
    runs: usize,
) -> Result<NoClOutcome<L::Snapshot>>
where
    L: Learner,
    F: FnMut(u64) -> Result<L>,
{
    if runs == 0 {
        return Err(Error::InvalidArgument("No-CL needs at least one run".into()));
    }
    let seeds: Vec<u64> = (0..runs).map(|i| no_cl_run_seed(config.seed, i)).collect();
    run_no_cl_with_seeds(factory, data, validation, config, &seeds)
}

/// No-CL runs with explicit per-run seeds.
pub fn run_no_cl_with_seeds<L, F>(
    mut factory: F,
    data: &[SequenceExample],
    validation: &[SequenceExample],
    config: &RegimenConfig,
    seeds: &[u64],
) -> Result<NoClOutcome<L::Snapshot>>
where
    L: Learner,
    F: FnMut(u64) -> Result<L>,
{
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("No-CL needs at least one run".into()));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut learner = factory(seed)?;
        let cfg = RegimenConfig { seed, ..*config };
        outcomes.push(run_shuffled(&mut learner, data, validation, &cfg)?);
    }
    let metrics: Vec<f64> = outcomes.iter().map(|o| o.best_metric).collect();
    Ok(NoClOutcome {
        seeds: seeds.to_vec(),
        mean_metric: stats::mean(&metrics).unwrap_or(f64::NAN),
        stddev_metric: stats::sample_stddev(&metrics),
        runs: outcomes,
    })
}

/// Single-run dispatch; `NoCl` here is one shuffled run with `config.seed`.
pub fn run_regimen<L: Learner>(
    kind: RegimenKind,
    learner: &mut L,
    data: &[SequenceExample],
    curriculum: &Curriculum,
    policy: BucketPolicy,
    validation: &[SequenceExample],
    config: &RegimenConfig,
) -> Result<RegimenOutcome<L::Snapshot>> {
    match kind {
        RegimenKind::OnePass => {
            let b = build_buckets(data, curriculum, policy)?;
            run_one_pass(learner, data, &b, validation, config)
        }
        RegimenKind::BabySteps => {
            let b = build_buckets(data, curriculum, policy)?;
            run_baby_steps(learner, data, &b, validation, config)
        }
        RegimenKind::Sorted => run_sorted(learner, data, curriculum, validation, config),
        RegimenKind::NoCl => run_shuffled(learner, data, validation, config),
    }
}

impl fmt::Display for BucketSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .buckets
            .iter()
            .map(|b| format!("[{}..={}]x{}", b.min_score, b.max_score, b.members.len()))
            .collect();
        f.write_str(&parts.join(" "))
    }
}
