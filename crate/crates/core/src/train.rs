//! Losses, backpropagation through time, RMSprop and finite-difference
//! gradient verification.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::curriculum::{Goal, Learner};
use crate::dataset::{SequenceExample, Target};
use crate::linalg::{self, Matrix, Rng, Vector};
use crate::model::{self, forward, sample_dropout, BiasMode, ForwardTrace, Head, LstmParams, Prediction};
use crate::{Error, Result};

/// Gradient (or any other per-parameter quantity) shaped like [`LstmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Matrix,
    pub gates: Matrix,
    pub gate_bias: Vector,
    pub proj: Matrix,
}

impl Gradients {
    pub fn zeros_like(params: &LstmParams) -> Self {
        Gradients {
            embed: Matrix::zeros(params.embed.rows(), params.embed.cols()),
            gates: Matrix::zeros(params.gates.rows(), params.gates.cols()),
            gate_bias: Vector::zeros(params.gate_bias.len()),
            proj: Matrix::zeros(params.proj.rows(), params.proj.cols()),
        }
    }

    pub fn is_congruent(&self, params: &LstmParams) -> bool {
        self.embed.shape() == params.embed.shape()
            && self.gates.shape() == params.gates.shape()
            && self.gate_bias.len() == params.gate_bias.len()
            && self.proj.shape() == params.proj.shape()
    }

    fn slices(&self) -> [&[f64]; 4] {
        [
            self.embed.as_slice(),
            self.gates.as_slice(),
            self.gate_bias.as_slice(),
            self.proj.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.embed.as_mut_slice(),
            self.gates.as_mut_slice(),
            self.gate_bias.as_mut_slice(),
            self.proj.as_mut_slice(),
        ]
    }

    /// Flattened values in parameter order (embed, gates, gate_bias, proj).
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for s in self.slices_mut() {
            if index < s.len() {
                return &mut s[index];
            }
            index -= s.len();
        }
        panic!("gradient index out of range");
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum())
    }

    pub fn check_finite(&self) -> Result<()> {
        const NAMES: [&str; 4] = ["embed", "gates", "gate_bias", "proj"];
        for (name, s) in NAMES.iter().zip(self.slices()) {
            if let Some(i) = s.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    detail: format!("{name}[{i}] = {}", s[i]),
                });
            }
        }
        Ok(())
    }
}

/// Squared error for scalars, negative log-likelihood for distributions.
pub fn loss(prediction: &Prediction, target: &Target) -> Result<f64> {
    match (prediction, target) {
        (Prediction::Scalar(y), Target::Scalar(t)) => Ok((y - t) * (y - t)),
        (Prediction::Distribution(p), Target::Class(k)) => {
            if *k >= p.len() {
                return Err(Error::ClassOutOfRange {
                    class: *k,
                    classes: p.len(),
                });
            }
            Ok(-libm::log(p[*k]))
        }
        _ => Err(Error::TaskMismatch("prediction and target kinds differ")),
    }
}

fn check_trace(trace: &ForwardTrace, params: &LstmParams) -> Result<()> {
    let d = &params.dims;
    let mismatch = |op, expected, found| Err(Error::DimensionMismatch { op, expected, found });
    for s in &trace.steps {
        if s.token >= d.vocab {
            return Err(Error::TokenOutOfVocab { token: s.token, vocab: d.vocab });
        }
        if s.input.len() != d.embed {
            return mismatch("trace input", d.embed, s.input.len());
        }
        if s.state.h.len() != d.hidden || s.gates.input.len() != d.hidden {
            return mismatch("trace state", d.hidden, s.state.h.len());
        }
    }
    if let Some(mask) = &trace.dropout {
        if mask.input.len() != d.embed || mask.output.len() != d.hidden {
            return mismatch("trace dropout mask", d.embed + d.hidden, mask.input.len() + mask.output.len());
        }
    }
    if trace.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// Gradient of the head loss with respect to `proj · h`, and the loss itself.
fn head_backward(u: &[f64], target: &Target, head: Head) -> Result<(f64, Vec<f64>)> {
    match (head, target) {
        (Head::Regression, Target::Scalar(t)) => {
            let y = linalg::relu(u[0]);
            let gate = if u[0] > 0.0 { 1.0 } else { 0.0 };
            Ok(((y - t) * (y - t), vec![2.0 * (y - t) * gate]))
        }
        (Head::Classification { classes }, Target::Class(k)) => {
            if *k >= classes {
                return Err(Error::ClassOutOfRange { class: *k, classes });
            }
            let r: Vec<f64> = u.iter().copied().map(linalg::relu).collect();
            let p = model::softmax(&r);
            let du = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let dr = pj - if j == *k { 1.0 } else { 0.0 };
                    if u[j] > 0.0 {
                        dr
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok((-libm::log(p[*k]), du))
        }
        _ => Err(Error::TaskMismatch("target kind does not match the model head")),
    }
}

/// Exact gradient of the example loss through the unrolled recurrence.
pub fn backward(trace: &ForwardTrace, target: &Target, params: &LstmParams) -> Result<Gradients> {
    backward_with_loss(trace, target, params).map(|(_, g)| g)
}

/// [`backward`] that also returns the loss.
pub fn backward_with_loss(
    trace: &ForwardTrace,
    target: &Target,
    params: &LstmParams,
) -> Result<(f64, Gradients)> {
    check_trace(trace, params)?;
    let d = &params.dims;
    let (n, e) = (d.hidden, d.embed);
    let mut grads = Gradients::zeros_like(params);

    let hd = trace.head_input();
    let u = model::head_preactivation(hd.as_slice(), params)?;
    let (loss, du) = head_backward(&u, target, d.head)?;
    linalg::add_outer(&mut grads.proj, &du, hd.as_slice());
    let mut dh = vec![0.0; n];
    linalg::matvec_transposed_acc(&params.proj, &du, &mut dh);
    if let Some(mask) = &trace.dropout {
        for (g, m) in dh.iter_mut().zip(mask.output.iter()) {
            *g *= m;
        }
    }

    let zeros = vec![0.0; n];
    let mut dc = vec![0.0; n];
    let mut da = vec![0.0; 4 * n];
    let mut z = vec![0.0; e + n];
    let mut dz = vec![0.0; e + n];
    for t in (0..trace.len()).rev() {
        let step = &trace.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            let s = &trace.steps[t - 1].state;
            (s.h.as_slice(), s.c.as_slice())
        };
        let g = &step.gates;
        for j in 0..n {
            let (ig, fg, og, mg) = (g.input[j], g.forget[j], g.output[j], g.candidate[j]);
            let tc = linalg::tanh(step.state.c[j]);
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * og * (1.0 - tc * tc);
            let d_i = dc[j] * mg;
            let d_f = dc[j] * c_prev[j];
            let d_m = dc[j] * ig;
            da[j] = d_i * ig * (1.0 - ig);
            da[n + j] = d_f * fg * (1.0 - fg);
            da[2 * n + j] = d_o * og * (1.0 - og);
            da[3 * n + j] = d_m * (1.0 - mg * mg);
            dc[j] *= fg;
        }
        z[..e].copy_from_slice(step.input.as_slice());
        z[e..].copy_from_slice(h_prev);
        linalg::add_outer(&mut grads.gates, &da, &z);
        for (b, a) in grads.gate_bias.as_mut_slice().iter_mut().zip(&da) {
            *b += a;
        }
        dz.iter_mut().for_each(|x| *x = 0.0);
        linalg::matvec_transposed_acc(&params.gates, &da, &mut dz);
        let row = grads.embed.row_mut(step.token);
        match &trace.dropout {
            None => row.iter_mut().zip(&dz[..e]).for_each(|(r, g)| *r += g),
            Some(mask) => row
                .iter_mut()
                .zip(&dz[..e])
                .zip(mask.input.iter())
                .for_each(|((r, g), m)| *r += g * m),
        }
        dh.copy_from_slice(&dz[e..]);
    }
    if params.bias_mode == BiasMode::Disabled {
        grads.gate_bias.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    }
    Ok((loss, grads))
}

/// Dropout-free loss of one example.
pub fn example_loss(params: &LstmParams, example: &SequenceExample) -> Result<f64> {
    let p = model::predict(params, &example.tokens)?;
    loss(&p, &example.target)
}

/// `loss(plus) - loss(minus)`, factored so that nearby predictions do not cancel.
pub fn loss_difference(plus: &Prediction, minus: &Prediction, target: &Target) -> Result<f64> {
    match (plus, minus, target) {
        (Prediction::Scalar(a), Prediction::Scalar(b), Target::Scalar(t)) => Ok((a - b) * (a + b - 2.0 * t)),
        (Prediction::Distribution(p), Prediction::Distribution(q), Target::Class(k)) => {
            if *k >= p.len() || *k >= q.len() {
                return Err(Error::ClassOutOfRange {
                    class: *k,
                    classes: p.len(),
                });
            }
            Ok(libm::log1p((q[*k] - p[*k]) / p[*k]))
        }
        _ => Err(Error::TaskMismatch("prediction and target kinds differ")),
    }
}

/// RMSprop hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            learning_rate: 0.001,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub config: RmspropConfig,
    pub mean_square: Gradients,
}

impl RmspropState {
    pub fn new(params: &LstmParams, config: RmspropConfig) -> Self {
        RmspropState {
            config,
            mean_square: Gradients::zeros_like(params),
        }
    }

    pub fn reset(&mut self) {
        self.mean_square.scale(0.0);
    }
}

/// `ms ← decay·ms + (1−decay)·g²`, `θ ← θ − lr·g/√(ms + ε)`.
///
/// Parameters stay untouched when the gradient is not finite.
pub fn rmsprop_update(params: &mut LstmParams, grads: &Gradients, state: &mut RmspropState) -> Result<()> {
    if !grads.is_congruent(params) || !state.mean_square.is_congruent(params) {
        return Err(Error::DimensionMismatch {
            op: "rmsprop_update",
            expected: params.param_count(),
            found: grads.len(),
        });
    }
    grads.check_finite()?;
    let RmspropConfig {
        learning_rate: lr,
        decay,
        epsilon,
    } = state.config;
    let mut idx = 0usize;
    let ms = state.mean_square.to_flat();
    let g = grads.to_flat();
    let mut new_ms = ms;
    params.for_each_mut(|p| {
        let gi = g[idx];
        let m = decay * new_ms[idx] + (1.0 - decay) * gi * gi;
        new_ms[idx] = m;
        *p -= lr * gi / libm::sqrt(m + epsilon);
        idx += 1;
    });
    for (i, v) in new_ms.into_iter().enumerate() {
        *state.mean_square.flat_mut(i) = v;
    }
    if params.bias_mode == BiasMode::Disabled {
        params.gate_bias.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(())
}

/// Minibatch settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    /// Global-norm clipping threshold; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            dropout: 0.0,
            clip_norm: None,
        }
    }
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradients(
    params: &LstmParams,
    batch: &[&SequenceExample],
    dropout: f64,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let mut total = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for ex in batch {
        let mask = sample_dropout(params, dropout, rng)?;
        let trace = forward(params, &ex.tokens, mask.as_ref())?;
        let (l, g) = backward_with_loss(&trace, &ex.target, params)?;
        if !l.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                detail: format!("example of length {} gave {l}", ex.len()),
            });
        }
        loss_sum += l;
        total.add_assign(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss_sum * inv, total))
}

/// One pass over `data` in the given order; returns the mean per-example
/// training loss. The final partial batch is kept.
pub fn train_epoch(
    params: &mut LstmParams,
    optimizer: &mut RmspropState,
    data: &[&SequenceExample],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut loss_sum = 0.0;
    for batch in data.chunks(config.batch_size) {
        let (l, mut g) = batch_gradients(params, batch, config.dropout, rng)?;
        if let Some(max) = config.clip_norm {
            let norm = g.global_norm();
            if norm > max {
                g.scale(max / norm);
            }
        }
        rmsprop_update(params, &g, optimizer)?;
        loss_sum += l * batch.len() as f64;
    }
    Ok(loss_sum / data.len() as f64)
}

/// Comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub tolerance: f64,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks [`backward`] against central differences of the dropout-free loss.
pub fn gradient_check(
    params: &LstmParams,
    example: &SequenceExample,
    step: f64,
    tolerance: f64,
) -> Result<GradientCheckReport> {
    let trace = forward(params, &example.tokens, None)?;
    let analytic = backward(&trace, &example.target, params)?;
    compare_with_finite_differences(params, example, &analytic, step, tolerance)
}

/// Checks a supplied gradient against central differences.
pub fn compare_with_finite_differences(
    params: &LstmParams,
    example: &SequenceExample,
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
) -> Result<GradientCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    if !analytic.is_congruent(params) {
        return Err(Error::DimensionMismatch {
            op: "gradient_check",
            expected: params.param_count(),
            found: analytic.len(),
        });
    }
    let analytic = analytic.to_flat();
    let mut probe = params.clone();
    let bias_range = params.embed.as_slice().len() + params.gates.as_slice().len();
    let bias_range = bias_range..bias_range + params.gate_bias.len();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        if params.bias_mode == BiasMode::Disabled && bias_range.contains(&i) {
            numeric.push(0.0);
            continue;
        }
        let orig = *probe.flat_mut(i);
        *probe.flat_mut(i) = orig + step;
        let plus = model::predict(&probe, &example.tokens)?;
        *probe.flat_mut(i) = orig - step;
        let minus = model::predict(&probe, &example.tokens)?;
        *probe.flat_mut(i) = orig;
        numeric.push(loss_difference(&plus, &minus, &example.target)? / (2.0 * step));
    }
    let mut worst = 0usize;
    let mut max_err = 0.0f64;
    for (i, (a, b)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *b);
        if err > max_err || !err.is_finite() {
            max_err = if err.is_finite() { err } else { f64::INFINITY };
            worst = i;
        }
    }
    Ok(GradientCheckReport {
        analytic,
        numeric,
        max_relative_error: max_err,
        worst_index: worst,
        tolerance,
    })
}

/// Shape and screening of seeded gradient-check instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckInstanceSpec {
    pub head: Head,
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub length: usize,
    /// Half-width of the uniform weight draw.
    pub scale: f64,
    /// Minimum `|proj · h_T|` entry, keeping every relu input off its kink.
    pub margin: f64,
}

impl CheckInstanceSpec {
    /// n = 3, e = 3, T = 4 over ten symbols, weights uniform on ±1.
    pub fn small(head: Head) -> Self {
        CheckInstanceSpec {
            head,
            vocab: 10,
            embed: 3,
            hidden: 3,
            length: 4,
            scale: 1.0,
            margin: 1e-3,
        }
    }

    /// Instance drawn from `seed`, or `None` when it fails the kink screen.
    ///
    /// Regression instances must also have an active relu, otherwise every
    /// gradient is identically zero.
    pub fn instance(&self, seed: u64) -> Result<Option<(LstmParams, SequenceExample)>> {
        let mut rng = Rng::new(seed);
        let dims = model::ModelDims::new(self.vocab, self.embed, self.hidden, self.head);
        let params = LstmParams::init_with_scale(dims, BiasMode::Learned, self.scale, &mut rng)?;
        let tokens: Vec<usize> = (0..self.length).map(|_| rng.below(self.vocab as u64) as usize).collect();
        let target = match self.head {
            Head::Regression => Target::Scalar(tokens.iter().sum::<usize>() as f64),
            Head::Classification { classes } => Target::Class(rng.below(classes as u64) as usize),
        };
        let example = SequenceExample::new(tokens, target)?;
        let trace = forward(&params, &example.tokens, None)?;
        let pre = model::head_preactivation(trace.head_input().as_slice(), &params)?;
        let kinked = pre.iter().any(|u| u.abs() < self.margin);
        let dead = self.head == Head::Regression && pre[0] <= 0.0;
        Ok((!kinked && !dead).then_some((params, example)))
    }
}

/// Outcome of [`gradient_check_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    /// Seeds of the checked instances, with their reports.
    pub checks: Vec<(u64, GradientCheckReport)>,
    /// Seeds rejected by the kink screen.
    pub screened_out: usize,
}

impl SuiteReport {
    pub fn max_relative_error(&self) -> f64 {
        self.checks.iter().map(|(_, r)| r.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, r)| r.passed())
    }
}

/// Gradient-checks `count` screened instances drawn from seeds `first_seed, first_seed + 1, …`.
pub fn gradient_check_suite(
    spec: &CheckInstanceSpec,
    count: usize,
    first_seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<SuiteReport> {
    let mut checks = Vec::with_capacity(count);
    let mut screened_out = 0usize;
    let mut seed = first_seed;
    while checks.len() < count {
        match spec.instance(seed)? {
            Some((params, example)) => checks.push((seed, gradient_check(&params, &example, step, tolerance)?)),
            None => screened_out += 1,
        }
        seed = seed.wrapping_add(1);
        if screened_out > 1000 * (count + 1) {
            return Err(Error::InvalidArgument("kink screen rejects almost every instance".into()));
        }
    }
    Ok(SuiteReport { checks, screened_out })
}

/// Dropout-free evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean per-example loss (MSE for regression).
    pub mean_loss: f64,
    /// Fraction of argmax hits, classification only.
    pub accuracy: Option<f64>,
    pub count: usize,
}

pub fn evaluate(params: &LstmParams, examples: &[SequenceExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for ex in examples {
        let p = model::predict(params, &ex.tokens)?;
        loss_sum += loss(&p, &ex.target)?;
        if let (Some(k), Target::Class(t)) = (p.argmax(), ex.target) {
            hits += usize::from(k == t);
        }
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        mean_loss: loss_sum / n,
        accuracy: match params.dims.head {
            Head::Regression => None,
            Head::Classification { .. } => Some(hits as f64 / n),
        },
        count: examples.len(),
    })
}

/// The LSTM with its optimizer, exposed to the regimen engine.
///
/// Validation uses mean loss for regression and accuracy for classification.
#[derive(Debug, Clone)]
pub struct LstmLearner {
    pub params: LstmParams,
    pub optimizer: RmspropState,
    pub config: TrainConfig,
    rng: Rng,
}

impl LstmLearner {
    pub fn new(params: LstmParams, optimizer: RmspropConfig, config: TrainConfig, dropout_seed: u64) -> Self {
        let optimizer = RmspropState::new(&params, optimizer);
        LstmLearner {
            params,
            optimizer,
            config,
            rng: Rng::new(dropout_seed),
        }
    }
}

impl Learner for LstmLearner {
    type Snapshot = LstmParams;

    fn goal(&self) -> Goal {
        match self.params.dims.head {
            Head::Regression => Goal::Minimize,
            Head::Classification { .. } => Goal::Maximize,
        }
    }

    fn train_epoch(&mut self, data: &[&SequenceExample]) -> Result<f64> {
        train_epoch(&mut self.params, &mut self.optimizer, data, &self.config, &mut self.rng)
    }

    fn validate(&mut self, validation: &[SequenceExample]) -> Result<f64> {
        let eval = evaluate(&self.params, validation)?;
        Ok(eval.accuracy.unwrap_or(eval.mean_loss))
    }

    fn snapshot(&self) -> LstmParams {
        self.params.clone()
    }

    fn reset_optimizer(&mut self) {
        self.optimizer.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use crate::model::{DropoutMask, ModelDims};

    fn reg_dims(n: usize) -> ModelDims {
        ModelDims::new(10, n, n, Head::Regression)
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&Prediction::Scalar(5.0), &Target::Scalar(5.0)).unwrap(), 0.0);
        assert_eq!(loss(&Prediction::Scalar(3.0), &Target::Scalar(5.0)).unwrap(), 4.0);
        let uniform = Prediction::Distribution(Vector::filled(5, 0.2));
        let l = loss(&uniform, &Target::Class(2)).unwrap();
        assert!((l - 1.609_437_912_434_100_3).abs() < 1e-12);
        assert_eq!(
            loss(&uniform, &Target::Class(5)).unwrap_err(),
            Error::ClassOutOfRange { class: 5, classes: 5 }
        );
        assert!(loss(&uniform, &Target::Scalar(1.0)).is_err());
    }

    /// Parameters whose regression head outputs exactly `target` on `tokens`.
    fn fitted_regressor(tokens: &[usize]) -> (LstmParams, f64) {
        let mut p = LstmParams::init_with_scale(reg_dims(3), BiasMode::Learned, 0.5, &mut Rng::new(4)).unwrap();
        p.proj = Matrix::from_rows(&[&[1.0, 1.0, 1.0]]).unwrap();
        let y = model::predict(&p, tokens).unwrap().scalar().unwrap();
        (p, y)
    }

    #[test]
    fn zero_loss_gives_zero_head_gradient() {
        let tokens = [1, 2, 3];
        let (p, y) = fitted_regressor(&tokens);
        assert!(y > 0.0);
        let trace = forward(&p, &tokens, None).unwrap();
        let g = backward(&trace, &Target::Scalar(y), &p).unwrap();
        assert!(g.proj.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inactive_relu_kills_every_gradient() {
        let tokens = [1, 2, 3];
        let (mut p, _) = fitted_regressor(&tokens);
        p.proj = Matrix::from_rows(&[&[-1.0, -1.0, -1.0]]).unwrap();
        let trace = forward(&p, &tokens, None).unwrap();
        let h = trace.last_state().h.clone();
        assert!(p.proj.matvec(&h).unwrap()[0] < 0.0);
        let g = backward(&trace, &Target::Scalar(10.0), &p).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let p3 = LstmParams::init(reg_dims(3), BiasMode::Learned, &mut Rng::new(1)).unwrap();
        let p4 = LstmParams::init(reg_dims(4), BiasMode::Learned, &mut Rng::new(1)).unwrap();
        let trace = forward(&p3, &[1, 2], None).unwrap();
        assert!(matches!(
            backward(&trace, &Target::Scalar(1.0), &p4),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            backward(&trace, &Target::Class(1), &p3),
            Err(Error::TaskMismatch(_))
        ));
    }

    #[test]
    fn gradient_check_small_regression_and_classification() {
        let ex = SequenceExample::digit_sum(vec![3, 1, 4, 1]).unwrap();
        let p = LstmParams::init_with_scale(reg_dims(3), BiasMode::Learned, 0.5, &mut Rng::new(17)).unwrap();
        let report = gradient_check(&p, &ex, 1e-5, 1e-4).unwrap();
        if model::predict(&p, &ex.tokens).unwrap().scalar().unwrap() > 1e-3 {
            assert!(report.passed(), "max rel err {}", report.max_relative_error);
        }

        let dims = ModelDims::new(10, 3, 3, Head::Classification { classes: 4 });
        let p = LstmParams::init_with_scale(dims, BiasMode::Disabled, 0.8, &mut Rng::new(2)).unwrap();
        let ex = SequenceExample::new(vec![0, 9, 5], Target::Class(2)).unwrap();
        let report = gradient_check(&p, &ex, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_relative_error);
    }

    #[test]
    fn gradient_check_with_dropout_mask() {
        let dims = reg_dims(3);
        let mut p = LstmParams::init_with_scale(dims, BiasMode::Learned, 1.0, &mut Rng::new(5)).unwrap();
        p.proj = Matrix::from_rows(&[&[1.0, 1.0, 1.0]]).unwrap();
        let mask = DropoutMask::sample(0.5, 3, 3, &mut Rng::new(1)).unwrap();
        let ex = SequenceExample::digit_sum(vec![7, 2, 5]).unwrap();
        let trace = forward(&p, &ex.tokens, Some(&mask)).unwrap();
        let g = backward(&trace, &ex.target, &p).unwrap().to_flat();
        let predict_at = |q: &LstmParams| {
            let tr = forward(q, &ex.tokens, Some(&mask)).unwrap();
            Prediction::Scalar(model::predict_regression(&tr.head_input(), q).unwrap())
        };
        let mut q = p.clone();
        for i in 0..g.len() {
            let orig = *q.flat_mut(i);
            *q.flat_mut(i) = orig + 1e-5;
            let plus = predict_at(&q);
            *q.flat_mut(i) = orig - 1e-5;
            let minus = predict_at(&q);
            *q.flat_mut(i) = orig;
            let num = loss_difference(&plus, &minus, &ex.target).unwrap() / 2e-5;
            assert!(relative_error(g[i], num) < 1e-4, "entry {i}: {} vs {num}", g[i]);
        }
    }

    #[test]
    fn gradient_check_rejects_zero_step_and_flags_corruption() {
        let ex = SequenceExample::digit_sum(vec![3, 1, 4, 1]).unwrap();
        let mut p = LstmParams::init_with_scale(reg_dims(3), BiasMode::Learned, 0.5, &mut Rng::new(3)).unwrap();
        p.proj = Matrix::from_rows(&[&[1.0, 1.0, 1.0]]).unwrap();
        assert!(gradient_check(&p, &ex, 0.0, 1e-4).is_err());
        let trace = forward(&p, &ex.tokens, None).unwrap();
        let mut g = backward(&trace, &ex.target, &p).unwrap();
        *g.flat_mut(7) += 1.0;
        let report = compare_with_finite_differences(&p, &ex, &g, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_index, 7);
    }

    #[test]
    fn rmsprop_zero_gradient_only_decays() {
        let mut p = LstmParams::init(reg_dims(2), BiasMode::Learned, &mut Rng::new(1)).unwrap();
        let before = p.clone();
        let mut state = RmspropState::new(&p, RmspropConfig::default());
        state.mean_square.gates.as_mut_slice().iter_mut().for_each(|x| *x = 2.0);
        let g = Gradients::zeros_like(&p);
        rmsprop_update(&mut p, &g, &mut state).unwrap();
        assert_eq!(p, before);
        assert!(state.mean_square.gates.as_slice().iter().all(|&x| (x - 1.8).abs() < 1e-15));
    }

    #[test]
    fn rmsprop_single_step() {
        let mut p = LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap();
        let mut state = RmspropState::new(&p, RmspropConfig::default());
        let mut g = Gradients::zeros_like(&p);
        g.proj[(0, 1)] = 1.0;
        rmsprop_update(&mut p, &g, &mut state).unwrap();
        assert!((state.mean_square.proj[(0, 1)] - 0.1).abs() < 1e-15);
        let step = 0.001 / libm::sqrt(0.1 + 1e-8);
        assert!((p.proj[(0, 1)] + step).abs() < 1e-15);
        assert!((step - 0.003_162_3).abs() < 1e-7);
        assert_eq!(p.proj[(0, 0)], 0.0);

        let mut p2 = LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap();
        let mut s2 = RmspropState::new(&p2, RmspropConfig::default());
        rmsprop_update(&mut p2, &g, &mut s2).unwrap();
        assert_eq!(p, p2);
        assert_eq!(state, s2);
    }

    #[test]
    fn rmsprop_rejects_non_finite() {
        let mut p = LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap();
        let before = p.clone();
        let mut state = RmspropState::new(&p, RmspropConfig::default());
        let mut g = Gradients::zeros_like(&p);
        g.gates[(1, 1)] = f64::NAN;
        let err = rmsprop_update(&mut p, &g, &mut state).unwrap_err();
        assert!(err.to_string().contains("gates"));
        assert_eq!(p, before);
    }

    #[test]
    fn epoch_with_zero_learning_rate() {
        let mut p = LstmParams::init(reg_dims(3), BiasMode::Learned, &mut Rng::new(2)).unwrap();
        let before = p.clone();
        let cfg = RmspropConfig { learning_rate: 0.0, ..Default::default() };
        let mut state = RmspropState::new(&p, cfg);
        let ex = SequenceExample::digit_sum(vec![4, 4]).unwrap();
        let l = train_epoch(&mut p, &mut state, &[&ex], &TrainConfig::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(l, example_loss(&before, &ex).unwrap());
        assert_eq!(p, before);
    }

    #[test]
    fn identical_batch_matches_single_example() {
        let base = LstmParams::init(reg_dims(3), BiasMode::Learned, &mut Rng::new(6)).unwrap();
        let ex = SequenceExample::digit_sum(vec![9, 1, 8]).unwrap();
        let run = |data: &[&SequenceExample]| {
            let mut p = base.clone();
            let mut s = RmspropState::new(&p, RmspropConfig::default());
            train_epoch(&mut p, &mut s, data, &TrainConfig::default(), &mut Rng::new(0)).unwrap();
            p
        };
        let single = run(&[&ex]);
        let triple = run(&[&ex, &ex, &ex]);
        for (a, b) in single.gates.as_slice().iter().zip(triple.gates.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn partial_batch_is_kept() {
        // Three examples at batch size 2 => two updates, the second on one example.
        let base = LstmParams::init(reg_dims(2), BiasMode::Learned, &mut Rng::new(6)).unwrap();
        let a = SequenceExample::digit_sum(vec![1, 2]).unwrap();
        let b = SequenceExample::digit_sum(vec![3, 4, 5]).unwrap();
        let c = SequenceExample::digit_sum(vec![6]).unwrap();
        let cfg = TrainConfig { batch_size: 2, ..Default::default() };
        let mut p = base.clone();
        let mut s = RmspropState::new(&p, RmspropConfig::default());
        train_epoch(&mut p, &mut s, &[&a, &b, &c], &cfg, &mut Rng::new(0)).unwrap();

        let mut q = base.clone();
        let mut t = RmspropState::new(&q, RmspropConfig::default());
        let (_, g1) = batch_gradients(&q, &[&a, &b], 0.0, &mut Rng::new(0)).unwrap();
        rmsprop_update(&mut q, &g1, &mut t).unwrap();
        let (_, g2) = batch_gradients(&q, &[&c], 0.0, &mut Rng::new(0)).unwrap();
        rmsprop_update(&mut q, &g2, &mut t).unwrap();
        assert_eq!(p, q);

        // Batch size 128 with three examples is one update.
        let mut r = base.clone();
        let mut u = RmspropState::new(&r, RmspropConfig::default());
        train_epoch(&mut r, &mut u, &[&a, &b, &c], &TrainConfig::default(), &mut Rng::new(0)).unwrap();
        let mut w = base.clone();
        let mut v = RmspropState::new(&w, RmspropConfig::default());
        let (_, g) = batch_gradients(&w, &[&a, &b, &c], 0.0, &mut Rng::new(0)).unwrap();
        rmsprop_update(&mut w, &g, &mut v).unwrap();
        assert_eq!(r, w);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut g = Gradients::zeros_like(&LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap());
        g.proj[(0, 0)] = 3.0;
        g.proj[(0, 1)] = 4.0;
        assert_eq!(g.global_norm(), 5.0);
        assert!(train_epoch(
            &mut LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap(),
            &mut RmspropState::new(&LstmParams::zeros(reg_dims(2), BiasMode::Learned).unwrap(), RmspropConfig::default()),
            &[],
            &TrainConfig::default(),
            &mut Rng::new(0)
        )
        .is_err());
    }

    #[test]
    fn evaluation_metrics() {
        let dims = ModelDims::new(10, 2, 2, Head::Classification { classes: 3 });
        let p = LstmParams::zeros(dims, BiasMode::Learned).unwrap();
        let data = [
            SequenceExample::new(vec![1], Target::Class(0)).unwrap(),
            SequenceExample::new(vec![2], Target::Class(1)).unwrap(),
        ];
        let eval = evaluate(&p, &data).unwrap();
        assert_eq!(eval.accuracy, Some(0.5));
        assert!((eval.mean_loss - libm::log(3.0)).abs() < 1e-12);
    }
}
