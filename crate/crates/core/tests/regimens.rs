use curriculum_lstm_core::curriculum::{
    build_buckets, run_baby_steps, run_no_cl, run_no_cl_with_seeds, run_one_pass, run_regimen, run_shuffled,
    run_sorted, BucketPolicy, BucketSet, Convergence, Curriculum, EarlyStopping, Goal, Learner, PhaseEnd,
    RegimenConfig, RegimenKind,
};
use curriculum_lstm_core::dataset::{generate_digit_sum, DigitSumConfig, SequenceExample, Target};
use curriculum_lstm_core::experiment::ExperimentConfig;
use curriculum_lstm_core::train::LstmLearner;
use curriculum_lstm_core::Result;
use proptest::prelude::*;

/// Example whose scalar target doubles as a unique id.
fn tagged(id: usize, len: usize) -> SequenceExample {
    SequenceExample::new(vec![id % 10; len], Target::Scalar(id as f64)).unwrap()
}

fn id_of(ex: &SequenceExample) -> usize {
    match ex.target {
        Target::Scalar(v) => v as usize,
        Target::Class(c) => c,
    }
}

fn dataset(lengths: &[usize]) -> Vec<SequenceExample> {
    lengths.iter().enumerate().map(|(i, &l)| tagged(i, l)).collect()
}

/// Records every epoch's data in order and replays a scripted validation metric.
struct Stub<F: FnMut(usize) -> f64> {
    exposures: Vec<Vec<usize>>,
    metric: F,
    key: fn(&SequenceExample) -> usize,
    resets: usize,
}

impl<F: FnMut(usize) -> f64> Stub<F> {
    fn new(metric: F) -> Self {
        Stub {
            exposures: Vec::new(),
            metric,
            key: id_of,
            resets: 0,
        }
    }
}

impl<F: FnMut(usize) -> f64> Learner for Stub<F> {
    type Snapshot = usize;

    fn goal(&self) -> Goal {
        Goal::Minimize
    }

    fn train_epoch(&mut self, data: &[&SequenceExample]) -> Result<f64> {
        self.exposures.push(data.iter().map(|e| (self.key)(e)).collect());
        Ok(0.0)
    }

    fn validate(&mut self, _: &[SequenceExample]) -> Result<f64> {
        Ok((self.metric)(self.exposures.len() - 1))
    }

    fn snapshot(&self) -> usize {
        self.exposures.len()
    }

    fn reset_optimizer(&mut self) {
        self.resets += 1;
    }
}

fn flat(_: usize) -> f64 {
    1.0
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn bucket_ids(data: &[SequenceExample], buckets: &BucketSet, range: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    sorted(range.flat_map(|s| buckets.buckets[s].members.iter().map(|&i| id_of(&data[i]))).collect())
}

fn val() -> Vec<SequenceExample> {
    vec![tagged(0, 3)]
}

fn lengths_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 1..40)
}

proptest! {
    #[test]
    fn buckets_are_monotone_and_conserve_data(lengths in lengths_strategy(), q in 1usize..6) {
        let data = dataset(&lengths);
        for policy in [BucketPolicy::DistinctScores, BucketPolicy::Quantiles(q)] {
            let b = build_buckets(&data, &Curriculum::Length, policy).unwrap();
            for pair in b.buckets.windows(2) {
                prop_assert!(pair[0].max_score < pair[1].min_score);
            }
            for bucket in &b.buckets {
                prop_assert!(!bucket.members.is_empty());
                for &m in &bucket.members {
                    let s = data[m].len() as f64;
                    prop_assert!(bucket.min_score <= s && s <= bucket.max_score);
                }
            }
            let all = sorted(b.buckets.iter().flat_map(|x| x.members.clone()).collect());
            prop_assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
        }
        let distinct = {
            let mut l = lengths.clone();
            l.sort_unstable();
            l.dedup();
            l.len()
        };
        prop_assert_eq!(build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap().len(), distinct);
    }

    #[test]
    fn baby_steps_trains_on_the_union(lengths in lengths_strategy(), p in 1usize..4, seed in any::<u64>()) {
        let data = dataset(&lengths);
        let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
        let mut stub = Stub::new(flat);
        let out = run_baby_steps(&mut stub, &data, &b, &val(), &RegimenConfig::new(p, seed)).unwrap();
        prop_assert_eq!(out.history.phase_count(), b.len());
        for (rec, seen) in out.history.records.iter().zip(&stub.exposures) {
            prop_assert_eq!(&rec.buckets, &(0..=rec.phase).collect::<Vec<_>>());
            prop_assert_eq!(sorted(seen.clone()), bucket_ids(&data, &b, 0..=rec.phase));
            prop_assert_eq!(rec.train_size, seen.len());
        }
        let last = stub.exposures.last().unwrap();
        prop_assert_eq!(sorted(last.clone()), (0..data.len()).collect::<Vec<_>>());
    }

    #[test]
    fn one_pass_uses_each_bucket_alone(lengths in lengths_strategy(), p in 1usize..4, seed in any::<u64>()) {
        let data = dataset(&lengths);
        let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
        let mut stub = Stub::new(flat);
        let out = run_one_pass(&mut stub, &data, &b, &val(), &RegimenConfig::new(p, seed)).unwrap();
        prop_assert_eq!(out.history.phase_count(), b.len());
        for (rec, seen) in out.history.records.iter().zip(&stub.exposures) {
            prop_assert_eq!(&rec.buckets, &vec![rec.phase]);
            prop_assert_eq!(sorted(seen.clone()), bucket_ids(&data, &b, rec.phase..=rec.phase));
        }
        // Phases are visited in order and never revisited.
        let phases: Vec<usize> = out.history.records.iter().map(|r| r.phase).collect();
        prop_assert!(phases.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }

    #[test]
    fn sorted_epochs_are_nondecreasing(lengths in lengths_strategy(), seed in any::<u64>()) {
        let data = dataset(&lengths);
        let mut stub = Stub::new(flat);
        let out = run_sorted(&mut stub, &data, &Curriculum::Length, &val(), &RegimenConfig::new(2, seed)).unwrap();
        prop_assert_eq!(out.history.phase_count(), 1);
        for seen in &stub.exposures {
            prop_assert!(seen.windows(2).all(|w| data[w[0]].len() <= data[w[1]].len()));
            prop_assert_eq!(sorted(seen.clone()), (0..data.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn patience_counter_stays_in_range(metrics in prop::collection::vec(0u8..5, 1..60), p in 1usize..6) {
        let mut es = EarlyStopping::new(p, Goal::Minimize).unwrap();
        let mut best = f64::INFINITY;
        let mut run = 0usize;
        for m in metrics {
            let m = m as f64;
            let status = es.converged(m);
            prop_assert!(es.epochs_since_best() <= p);
            if m < best {
                best = m;
                run = 0;
                prop_assert_eq!(status, Convergence::Improved);
            } else {
                run += 1;
                prop_assert_eq!(status == Convergence::StopPhase, run >= p);
            }
            if status == Convergence::StopPhase {
                break;
            }
        }
    }

    #[test]
    fn every_regimen_is_deterministic(lengths in lengths_strategy(), seed in any::<u64>()) {
        let data = dataset(&lengths);
        for kind in RegimenKind::ALL {
            let run = || {
                let mut stub = Stub::new(|e| 1.0 / (1.0 + (e % 3) as f64));
                let out = run_regimen(kind, &mut stub, &data, &Curriculum::Length, BucketPolicy::DistinctScores,
                    &val(), &RegimenConfig::new(2, seed)).unwrap();
                (stub.exposures, out.history)
            };
            prop_assert_eq!(run(), run());
        }
    }
}

#[test]
fn union_sizes_for_three_buckets() {
    let lengths: Vec<usize> = [(10, 2), (20, 3), (30, 4)]
        .iter()
        .flat_map(|&(n, l)| std::iter::repeat(l).take(n))
        .collect();
    let data = dataset(&lengths);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    assert_eq!(b.sizes(), vec![10, 20, 30]);

    let mut stub = Stub::new(flat);
    let out = run_baby_steps(&mut stub, &data, &b, &val(), &RegimenConfig::new(1, 5)).unwrap();
    let sizes: Vec<usize> = (0..3).map(|s| out.history.phase(s).next().unwrap().train_size).collect();
    assert_eq!(sizes, vec![10, 30, 60]);

    let mut stub = Stub::new(flat);
    let out = run_one_pass(&mut stub, &data, &b, &val(), &RegimenConfig::new(1, 5)).unwrap();
    let sizes: Vec<usize> = (0..3).map(|s| out.history.phase(s).next().unwrap().train_size).collect();
    assert_eq!(sizes, vec![10, 20, 30]);
}

#[test]
fn bucket_examples() {
    let data = dataset(&[3, 5, 5, 2]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    assert_eq!(b.buckets.iter().map(|x| x.members.clone()).collect::<Vec<_>>(), vec![vec![3], vec![0], vec![1, 2]]);

    let split = generate_digit_sum(&DigitSumConfig::desk(), 11);
    let b = build_buckets(&split.train, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    assert_eq!(b.len(), 19);
    for (i, bucket) in b.buckets.iter().enumerate() {
        assert_eq!(bucket.members.len(), 100);
        assert!(bucket.members.iter().all(|&m| split.train[m].len() == i + 2));
    }
    assert_eq!(build_buckets(&dataset(&[4; 7]), &Curriculum::Length, BucketPolicy::DistinctScores).unwrap().len(), 1);
}

#[test]
fn patience_examples() {
    let stops = |p: usize, metrics: &[f64]| {
        let mut es = EarlyStopping::new(p, Goal::Minimize).unwrap();
        metrics.iter().position(|&m| es.converged(m) == Convergence::StopPhase).map(|i| i + 1)
    };
    assert_eq!(stops(2, &[1.0, 1.0, 1.0]), Some(3));
    assert_eq!(stops(2, &[1.0, 0.9, 1.0, 1.0]), Some(4));
    let improving: Vec<f64> = (0..100).map(|i| 1.0 / (i + 1) as f64).collect();
    assert_eq!(stops(10, &improving), None);
    assert!(EarlyStopping::new(0, Goal::Minimize).is_err());
}

#[test]
fn plateau_phase_lasts_patience_plus_one_epochs() {
    let data = dataset(&[2, 2, 3, 4, 4, 4]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    for p in 1..5 {
        let mut stub = Stub::new(flat);
        let out = run_baby_steps(&mut stub, &data, &b, &val(), &RegimenConfig::new(p, 3)).unwrap();
        assert_eq!(out.history.epochs_per_phase(), vec![p + 1; 3]);
        assert!(out.history.records.iter().filter(|r| r.phase_end.is_some()).all(|r| r.phase_end == Some(PhaseEnd::Converged)));
        // Ties never replace the global best, so the best stays at the first epoch.
        assert_eq!(out.best_epoch, 0);
    }
}

#[test]
fn epoch_count_per_phase_is_at_least_patience() {
    let data = dataset(&[2, 3, 3, 5, 6, 6, 6, 7]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    // Metric improves for a few epochs at the start of every phase, then plateaus.
    let mut stub = Stub::new(|e| 100.0 - (e % 9).min(4) as f64);
    let out = run_one_pass(&mut stub, &data, &b, &val(), &RegimenConfig::new(3, 8)).unwrap();
    assert_eq!(out.history.phase_count(), b.len());
    assert!(out.history.epochs_per_phase().iter().all(|&n| n >= 3));
}

#[test]
fn epoch_cap_ends_phases() {
    let data = dataset(&[2, 3, 4]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    let mut stub = Stub::new(|e| -(e as f64));
    let cfg = RegimenConfig {
        max_epochs_per_phase: Some(4),
        ..RegimenConfig::new(2, 1)
    };
    let out = run_baby_steps(&mut stub, &data, &b, &val(), &cfg).unwrap();
    assert_eq!(out.history.epochs_per_phase(), vec![4, 4, 4]);
    assert!(out.history.records.iter().filter_map(|r| r.phase_end).all(|e| e == PhaseEnd::EpochCap));
    assert_eq!(out.best_epoch, 11);
    assert_eq!(out.best, 12);
}

#[test]
fn best_snapshot_is_global_across_phases() {
    let data = dataset(&[2, 3, 4]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    let script = [5.0, 3.0, 4.0, 4.0, 9.0, 9.0, 9.0, 2.5, 7.0, 7.0];
    let mut stub = Stub::new(|e| script[e]);
    let out = run_one_pass(&mut stub, &data, &b, &val(), &RegimenConfig::new(2, 1)).unwrap();
    assert_eq!(out.history.epochs_per_phase(), vec![4, 3, 3]);
    assert_eq!(out.best_metric, 2.5);
    assert_eq!(out.best_epoch, 7);
    assert_eq!(out.best, 8);
    assert_eq!(out.last, 10);
    let snaps: Vec<bool> = out.history.records.iter().map(|r| r.snapshot).collect();
    assert_eq!(snaps, vec![true, true, false, false, false, false, false, true, false, false]);
}

#[test]
fn optimizer_reset_is_opt_in() {
    let data = dataset(&[2, 3, 4, 5]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    let mut stub = Stub::new(flat);
    run_baby_steps(&mut stub, &data, &b, &val(), &RegimenConfig::new(1, 1)).unwrap();
    assert_eq!(stub.resets, 0);
    let mut stub = Stub::new(flat);
    let cfg = RegimenConfig {
        reset_optimizer: true,
        ..RegimenConfig::new(1, 1)
    };
    run_baby_steps(&mut stub, &data, &b, &val(), &cfg).unwrap();
    assert_eq!(stub.resets, 3);
}

#[test]
fn within_phase_order_is_reshuffled() {
    let data = dataset(&[3; 30]);
    let mut stub = Stub::new(flat);
    run_shuffled(&mut stub, &data, &val(), &RegimenConfig::new(5, 9)).unwrap();
    assert_eq!(stub.exposures.len(), 6);
    assert!(stub.exposures.windows(2).any(|w| w[0] != w[1]));

    // With one score, Sorted is a pure shuffle and matches a No-CL run.
    let mut sorted_stub = Stub::new(flat);
    run_sorted(&mut sorted_stub, &data, &Curriculum::Length, &val(), &RegimenConfig::new(5, 9)).unwrap();
    assert_eq!(sorted_stub.exposures, stub.exposures);
}

#[test]
fn single_bucket_regimens_match_plain_training() {
    let data = dataset(&[4; 12]);
    let b = build_buckets(&data, &Curriculum::Length, BucketPolicy::DistinctScores).unwrap();
    let cfg = RegimenConfig::new(2, 21);
    let script = |e: usize| [3.0, 2.0, 2.5, 2.0, 1.0, 1.5, 1.5][e.min(6)];
    let mut plain = Stub::new(script);
    let plain_out = run_shuffled(&mut plain, &data, &val(), &cfg).unwrap();
    let mut one = Stub::new(script);
    let one_out = run_one_pass(&mut one, &data, &b, &val(), &cfg).unwrap();
    let mut baby = Stub::new(script);
    let baby_out = run_baby_steps(&mut baby, &data, &b, &val(), &cfg).unwrap();
    assert_eq!(plain.exposures, one.exposures);
    assert_eq!(plain.exposures, baby.exposures);
    assert_eq!(plain_out.best_epoch, one_out.best_epoch);
    assert_eq!(plain_out.best_epoch, baby_out.best_epoch);
}

#[test]
fn no_cl_runs_use_distinct_derived_seeds() {
    let data = dataset(&[2, 3, 3, 4, 5]);
    let cfg = RegimenConfig::new(2, 77);
    let out = run_no_cl(|_| Ok(Stub::new(flat)), &data, &val(), &cfg, 10).unwrap();
    assert_eq!(out.runs.len(), 10);
    let mut seeds = out.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 10);
    assert_eq!(out.stddev_metric, 0.0);

    let again = run_no_cl(|_| Ok(Stub::new(flat)), &data, &val(), &cfg, 10).unwrap();
    assert_eq!(out.seeds, again.seeds);
    assert!(run_no_cl(|_| Ok(Stub::new(flat)), &data, &val(), &cfg, 0).is_err());

    let per_seed = |seed: u64| {
        let out = run_no_cl_with_seeds(
            |s| Ok(Stub::new(move |e| (s % 7) as f64 + [1.0, 0.5, 0.5, 0.5][e.min(3)])),
            &data,
            &val(),
            &cfg,
            &[seed, seed, seed],
        )
        .unwrap();
        (out.mean_metric, out.stddev_metric)
    };
    assert_eq!(per_seed(4).1, 0.0);
    assert_eq!(per_seed(4), per_seed(4));
}

fn token_key(ex: &SequenceExample) -> usize {
    ex.tokens.iter().fold(1, |a, &t| a * 10 + t)
}

/// LSTM learner that also records what it was shown.
struct Recording {
    inner: LstmLearner,
    exposures: Vec<Vec<usize>>,
    metrics: Vec<f64>,
}

impl Learner for Recording {
    type Snapshot = ();

    fn goal(&self) -> Goal {
        self.inner.goal()
    }

    fn train_epoch(&mut self, data: &[&SequenceExample]) -> Result<f64> {
        self.exposures.push(data.iter().map(|e| token_key(e)).collect());
        self.inner.train_epoch(data)
    }

    fn validate(&mut self, validation: &[SequenceExample]) -> Result<f64> {
        let m = self.inner.validate(validation)?;
        self.metrics.push(m);
        Ok(m)
    }

    fn snapshot(&self) {}
}

#[test]
fn engine_is_model_agnostic() {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset = DigitSumConfig::new(6, 2, 5, 8, 8);
    cfg.hidden = 3;
    cfg.embed = 3;
    let split = generate_digit_sum(&cfg.dataset, 5);
    for kind in [RegimenKind::OnePass, RegimenKind::BabySteps, RegimenKind::Sorted, RegimenKind::NoCl] {
        let rc = RegimenConfig {
            max_epochs_per_phase: Some(8),
            ..RegimenConfig::new(2, 13)
        };
        let mut real = Recording {
            inner: cfg.learner(&split, 1).unwrap(),
            exposures: Vec::new(),
            metrics: Vec::new(),
        };
        let lstm = run_regimen(kind, &mut real, &split.train, &Curriculum::Length, BucketPolicy::DistinctScores, &split.validation, &rc).unwrap();

        let replay = real.metrics.clone();
        let mut stub = Stub::new(move |e| replay[e]);
        stub.key = token_key;
        let stubbed = run_regimen(kind, &mut stub, &split.train, &Curriculum::Length, BucketPolicy::DistinctScores, &split.validation, &rc).unwrap();
        assert_eq!(real.exposures, stub.exposures, "{kind}");
        assert_eq!(lstm.history.epochs_per_phase(), stubbed.history.epochs_per_phase());
    }
}
