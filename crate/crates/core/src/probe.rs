//! Hidden-state probing: every intermediate `h_t` is decoded through the
//! trained head, unchanged, to see what the network "would answer" after `t`
//! tokens.

use alloc::vec::Vec;

use crate::dataset::{running_sum_oracle, SequenceExample};
use crate::model::{self, LstmParams, Prediction};
use crate::{Error, Result};

/// Anything that yields one decoded output per prefix of a sequence.
pub trait Probe {
    fn probe_outputs(&self, tokens: &[usize]) -> Result<Vec<Prediction>>;
}

impl Probe for LstmParams {
    fn probe_outputs(&self, tokens: &[usize]) -> Result<Vec<Prediction>> {
        let trace = model::forward(self, tokens, None)?;
        trace.hidden_states().map(|h| model::decode(h, self)).collect()
    }
}

/// Reference regressor whose probe at `t` is the running sum plus `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceAdder {
    pub offset: f64,
}

impl Probe for ReferenceAdder {
    fn probe_outputs(&self, tokens: &[usize]) -> Result<Vec<Prediction>> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(running_sum_oracle(tokens)?
            .into_iter()
            .map(|s| Prediction::Scalar(s + self.offset))
            .collect())
    }
}

/// Regressor that always answers `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
}

impl Probe for ConstantModel {
    fn probe_outputs(&self, tokens: &[usize]) -> Result<Vec<Prediction>> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(tokens.iter().map(|_| Prediction::Scalar(self.value)).collect())
    }
}

/// Per-timestep decoded outputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub tokens: Vec<usize>,
    pub predictions: Vec<Prediction>,
    pub oracle: Option<Vec<f64>>,
}

impl ProbeTrace {
    /// Scalar probe values; `None` for a classifier.
    pub fn values(&self) -> Option<Vec<f64>> {
        self.predictions.iter().map(Prediction::scalar).collect()
    }

    pub fn final_prediction(&self) -> &Prediction {
        self.predictions.last().expect("probe traces are never empty")
    }

    pub fn with_oracle(mut self, oracle: Vec<f64>) -> Result<Self> {
        if oracle.len() != self.tokens.len() {
            return Err(Error::DimensionMismatch {
                op: "probe oracle",
                expected: self.tokens.len(),
                found: oracle.len(),
            });
        }
        self.oracle = Some(oracle);
        Ok(self)
    }
}

pub fn probe<P: Probe + ?Sized>(model: &P, tokens: &[usize]) -> Result<ProbeTrace> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let predictions = model.probe_outputs(tokens)?;
    debug_assert_eq!(predictions.len(), tokens.len());
    Ok(ProbeTrace {
        tokens: tokens.to_vec(),
        predictions,
        oracle: None,
    })
}

/// Probe of a digit sequence with the running sum attached.
pub fn probe_digit_sum<P: Probe + ?Sized>(model: &P, tokens: &[usize]) -> Result<ProbeTrace> {
    probe(model, tokens)?.with_oracle(running_sum_oracle(tokens)?)
}

fn scalar_probe<P: Probe + ?Sized>(model: &P, tokens: &[usize]) -> Result<Vec<f64>> {
    probe(model, tokens)?
        .values()
        .ok_or(Error::TaskMismatch("scalar probe values need a regression head"))
}

/// Single-pass (Welford) co-moment accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorrelationAccumulator {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CorrelationAccumulator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Pearson correlation; `None` when either side has zero variance.
    pub fn correlation(&self) -> Option<f64> {
        if self.n < 2 || self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return None;
        }
        Some((self.c_xy / libm::sqrt(self.m2_x * self.m2_y)).clamp(-1.0, 1.0))
    }
}

/// Count, mean and population variance of a group of Δ values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct MomentAcc {
    n: usize,
    mean: f64,
    m2: f64,
}

impl MomentAcc {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn finish(self) -> Moments {
        Moments {
            count: self.n,
            mean: if self.n == 0 { 0.0 } else { self.mean },
            variance: if self.n == 0 { 0.0 } else { self.m2 / self.n as f64 },
        }
    }
}

/// Δ_t = probe_t − probe_{t−1} over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    /// Entry `k` holds position `t = k + 2` (1-based positions).
    pub by_position: Vec<Moments>,
    /// Entry `d` groups Δ_t by the input digit at `t`.
    pub by_digit: Vec<Moments>,
}

impl DeltaSeries {
    pub fn position(&self, t: usize) -> Option<&Moments> {
        t.checked_sub(2).and_then(|k| self.by_position.get(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAnalysis {
    pub series: DeltaSeries,
    /// Pearson correlation of Δ_t with the input digit; `None` if undefined.
    pub correlation: Option<f64>,
    pub pairs: usize,
}

/// Successive differences of one scalar probe trace.
pub fn deltas(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn delta_analysis<P: Probe + ?Sized>(model: &P, test: &[SequenceExample]) -> Result<DeltaAnalysis> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_position: Vec<MomentAcc> = Vec::new();
    let mut by_digit: Vec<MomentAcc> = Vec::new();
    let mut acc = CorrelationAccumulator::default();
    for ex in test {
        let values = scalar_probe(model, &ex.tokens)?;
        for (k, d) in deltas(&values).into_iter().enumerate() {
            let token = ex.tokens[k + 1];
            if by_position.len() <= k {
                by_position.resize(k + 1, MomentAcc::default());
            }
            by_position[k].push(d);
            if by_digit.len() <= token {
                by_digit.resize(token + 1, MomentAcc::default());
            }
            by_digit[token].push(d);
            acc.push(d, token as f64);
        }
    }
    Ok(DeltaAnalysis {
        series: DeltaSeries {
            by_position: by_position.into_iter().map(MomentAcc::finish).collect(),
            by_digit: by_digit.into_iter().map(MomentAcc::finish).collect(),
        },
        correlation: acc.correlation(),
        pairs: acc.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeCorrelation {
    /// Pearson correlation of probe values with oracle values over all positions.
    pub correlation: Option<f64>,
    pub mean_abs_deviation: f64,
    pub count: usize,
}

/// Compares every probe value of every test sequence with `oracle`.
pub fn probe_correlation<P, O>(model: &P, test: &[SequenceExample], oracle: O) -> Result<ProbeCorrelation>
where
    P: Probe + ?Sized,
    O: Fn(&[usize]) -> Result<Vec<f64>>,
{
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = CorrelationAccumulator::default();
    let mut abs_dev = 0.0;
    for ex in test {
        let values = scalar_probe(model, &ex.tokens)?;
        let truth = oracle(&ex.tokens)?;
        if truth.len() != values.len() {
            return Err(Error::DimensionMismatch {
                op: "probe oracle",
                expected: values.len(),
                found: truth.len(),
            });
        }
        for (p, o) in values.iter().zip(&truth) {
            acc.push(*p, *o);
            abs_dev += (p - o).abs();
        }
    }
    Ok(ProbeCorrelation {
        correlation: acc.correlation(),
        mean_abs_deviation: abs_dev / acc.count() as f64,
        count: acc.count(),
    })
}

/// [`probe_correlation`] against the running sum.
pub fn running_sum_correlation<P: Probe + ?Sized>(
    model: &P,
    test: &[SequenceExample],
) -> Result<ProbeCorrelation> {
    probe_correlation(model, test, running_sum_oracle)
}
