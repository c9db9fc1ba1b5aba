//! Single-layer LSTM over embedded symbols with a regression or a
//! classification head.
//!
//! One step computes
//!
//! ```text
//! x      = embed[token] ⊙ input_mask
//! a      = gates · [x ; h_prev] + gate_bias
//! i,f,o  = sigm(a_i), sigm(a_f), sigm(a_o)
//! m      = tanh(a_m)
//! c      = f ⊙ c_prev + i ⊙ m
//! h      = o ⊙ tanh(c)
//! ```
//!
//! and the heads read the final hidden state, masked by the output dropout
//! mask: `relu(proj · h)` for regression and `softmax(relu(proj · h))` for
//! classification. The recurrent connection always carries the unmasked `h`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{self, init_matrix, sigm, InitScheme, Matrix, Rng, Vector};
use crate::{Error, Result};

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Regression,
    Classification { classes: usize },
}

impl Head {
    pub fn out_dim(self) -> usize {
        match self {
            Head::Regression => 1,
            Head::Classification { classes } => classes,
        }
    }
}

/// Whether the gate pre-activation carries a learned bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    /// Bias initialised with the forget slice at 1.0.
    #[default]
    Learned,
    /// No bias at all: the literal cell equations.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub head: Head,
}

impl ModelDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize, head: Head) -> Self {
        ModelDims {
            vocab,
            embed,
            hidden,
            head,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.hidden == 0 || self.out_dim() == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All learnable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub dims: ModelDims,
    pub bias_mode: BiasMode,
    /// `[vocab × embed]`, row `t` is the embedding of symbol `t`.
    pub embed: Matrix,
    /// `[4·hidden × (embed + hidden)]`, row blocks ordered input, forget, output, candidate.
    pub gates: Matrix,
    pub gate_bias: Vector,
    /// `[out_dim × hidden]`.
    pub proj: Matrix,
}

pub const INIT_SCALE: f64 = 0.1;

impl LstmParams {
    /// Uniform(±0.1) weights; the forget-gate bias starts at 1.0 in learned-bias mode.
    pub fn init(dims: ModelDims, bias_mode: BiasMode, rng: &mut Rng) -> Result<Self> {
        Self::init_with_scale(dims, bias_mode, INIT_SCALE, rng)
    }

    pub fn init_with_scale(
        dims: ModelDims,
        bias_mode: BiasMode,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        dims.validate()?;
        let n = dims.hidden;
        let scheme = InitScheme::Uniform(scale);
        let embed = init_matrix(dims.vocab, dims.embed, scheme, rng);
        let gates = init_matrix(4 * n, dims.embed + n, scheme, rng);
        let proj = init_matrix(dims.out_dim(), n, scheme, rng);
        let mut gate_bias = Vector::zeros(4 * n);
        if bias_mode == BiasMode::Learned {
            for j in n..2 * n {
                gate_bias[j] = 1.0;
            }
        }
        Ok(LstmParams {
            dims,
            bias_mode,
            embed,
            gates,
            gate_bias,
            proj,
        })
    }

    pub fn zeros(dims: ModelDims, bias_mode: BiasMode) -> Result<Self> {
        dims.validate()?;
        let n = dims.hidden;
        Ok(LstmParams {
            dims,
            bias_mode,
            embed: Matrix::zeros(dims.vocab, dims.embed),
            gates: Matrix::zeros(4 * n, dims.embed + n),
            gate_bias: Vector::zeros(4 * n),
            proj: Matrix::zeros(dims.out_dim(), n),
        })
    }

    /// Assembles parameters from parts, checking every shape.
    pub fn from_parts(
        dims: ModelDims,
        bias_mode: BiasMode,
        embed: Matrix,
        gates: Matrix,
        gate_bias: Vector,
        proj: Matrix,
    ) -> Result<Self> {
        dims.validate()?;
        let p = LstmParams {
            dims,
            bias_mode,
            embed,
            gates,
            gate_bias,
            proj,
        };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = &self.dims;
        let n = d.hidden;
        let expect = |op: &'static str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    op,
                    expected: want.0 * want.1,
                    found: got.0 * got.1,
                })
            }
        };
        expect("embed shape", self.embed.shape(), (d.vocab, d.embed))?;
        expect("gates shape", self.gates.shape(), (4 * n, d.embed + n))?;
        expect("proj shape", self.proj.shape(), (d.out_dim(), n))?;
        if self.gate_bias.len() != 4 * n {
            return Err(Error::DimensionMismatch {
                op: "gate_bias shape",
                expected: 4 * n,
                found: self.gate_bias.len(),
            });
        }
        if self.bias_mode == BiasMode::Disabled && self.gate_bias.iter().any(|&b| b != 0.0) {
            return Err(Error::InvalidArgument("bias disabled but gate_bias is non-zero".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.embed.as_slice().len()
            + self.gates.as_slice().len()
            + self.gate_bias.len()
            + self.proj.as_slice().len()
    }

    pub fn is_finite(&self) -> bool {
        self.embed.as_slice().iter().all(|x| x.is_finite())
            && self.gates.as_slice().iter().all(|x| x.is_finite())
            && self.gate_bias.iter().all(|x| x.is_finite())
            && self.proj.as_slice().iter().all(|x| x.is_finite())
    }

    /// Visits every parameter in a fixed order: embed, gates, gate_bias, proj.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.embed.as_mut_slice().iter_mut().for_each(&mut f);
        self.gates.as_mut_slice().iter_mut().for_each(&mut f);
        self.gate_bias.as_mut_slice().iter_mut().for_each(&mut f);
        self.proj.as_mut_slice().iter_mut().for_each(&mut f);
    }

    /// Mutable access to the parameter at flat `index` (same order as [`for_each_mut`](Self::for_each_mut)).
    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        let sizes = [
            self.embed.as_slice().len(),
            self.gates.as_slice().len(),
            self.gate_bias.len(),
        ];
        if index < sizes[0] {
            return &mut self.embed.as_mut_slice()[index];
        }
        index -= sizes[0];
        if index < sizes[1] {
            return &mut self.gates.as_mut_slice()[index];
        }
        index -= sizes[1];
        if index < sizes[2] {
            return &mut self.gate_bias.as_mut_slice()[index];
        }
        index -= sizes[2];
        &mut self.proj.as_mut_slice()[index]
    }

    pub fn initial_state(&self) -> CellState {
        CellState::zeros(self.dims.hidden)
    }

    pub fn forward(&self, tokens: &[usize], dropout: Option<&DropoutMask>) -> Result<ForwardTrace> {
        forward(self, tokens, dropout)
    }
}

/// Hidden output and memory cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(n: usize) -> Self {
        CellState {
            h: Vector::zeros(n),
            c: Vector::zeros(n),
        }
    }
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub input: Vector,
    pub forget: Vector,
    pub output: Vector,
    pub candidate: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub token: usize,
    /// Embedded input after the input mask.
    pub input: Vector,
    pub gates: GateRecord,
    pub state: CellState,
}

/// Per-sequence dropout masks (inverted scaling: kept units are multiplied by `1/(1-rate)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub input: Vector,
    pub output: Vector,
}

impl DropoutMask {
    pub fn sample(rate: f64, embed: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(alloc::format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |len: usize| {
            let v: Vec<f64> = (0..len)
                .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
                .collect();
            Vector::from(&v[..])
        };
        let input = draw(embed);
        let output = draw(hidden);
        Ok(DropoutMask { input, output })
    }
}

/// Samples a mask for `rate`, or `None` when dropout is off.
pub fn sample_dropout(
    params: &LstmParams,
    rate: f64,
    rng: &mut Rng,
) -> Result<Option<DropoutMask>> {
    if rate == 0.0 {
        return Ok(None);
    }
    DropoutMask::sample(rate, params.dims.embed, params.dims.hidden, rng).map(Some)
}

/// Recorded forward pass: one [`StepRecord`] per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: Vec<StepRecord>,
    pub dropout: Option<DropoutMask>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_state(&self) -> &CellState {
        &self.steps.last().expect("trace is never empty").state
    }

    /// Final hidden state as seen by the head (output mask applied).
    pub fn head_input(&self) -> Vector {
        let h = &self.last_state().h;
        match &self.dropout {
            None => h.clone(),
            Some(mask) => {
                let v: Vec<f64> = h.iter().zip(mask.output.iter()).map(|(a, b)| a * b).collect();
                Vector::from(&v[..])
            }
        }
    }

    pub fn hidden_states(&self) -> impl Iterator<Item = &Vector> {
        self.steps.iter().map(|s| &s.state.h)
    }
}

pub fn lstm_step(
    token: usize,
    prev: &CellState,
    params: &LstmParams,
    dropout: Option<&DropoutMask>,
) -> Result<StepRecord> {
    let d = &params.dims;
    if token >= d.vocab {
        return Err(Error::TokenOutOfVocab {
            token,
            vocab: d.vocab,
        });
    }
    let n = d.hidden;
    if prev.h.len() != n || prev.c.len() != n {
        return Err(Error::DimensionMismatch {
            op: "lstm_step state",
            expected: n,
            found: prev.h.len().min(prev.c.len()),
        });
    }
    let mut z = vec![0.0; d.embed + n];
    z[..d.embed].copy_from_slice(params.embed.row(token));
    if let Some(mask) = dropout {
        for (x, m) in z[..d.embed].iter_mut().zip(mask.input.iter()) {
            *x *= m;
        }
    }
    z[d.embed..].copy_from_slice(prev.h.as_slice());

    let mut a = vec![0.0; 4 * n];
    linalg::matvec_into(&params.gates, &z, &mut a);
    for (x, b) in a.iter_mut().zip(params.gate_bias.iter()) {
        *x += b;
    }

    let mut i = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut h = vec![0.0; n];
    for j in 0..n {
        i[j] = sigm(a[j]);
        f[j] = sigm(a[n + j]);
        o[j] = sigm(a[2 * n + j]);
        m[j] = linalg::tanh(a[3 * n + j]);
        c[j] = f[j] * prev.c[j] + i[j] * m[j];
        h[j] = o[j] * linalg::tanh(c[j]);
    }
    z.truncate(d.embed);
    Ok(StepRecord {
        token,
        input: Vector::from(&z[..]),
        gates: GateRecord {
            input: Vector::from(&i[..]),
            forget: Vector::from(&f[..]),
            output: Vector::from(&o[..]),
            candidate: Vector::from(&m[..]),
        },
        state: CellState {
            h: Vector::from(&h[..]),
            c: Vector::from(&c[..]),
        },
    })
}

/// Runs the cell over `tokens` from the zero state.
pub fn forward(
    params: &LstmParams,
    tokens: &[usize],
    dropout: Option<&DropoutMask>,
) -> Result<ForwardTrace> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut steps: Vec<StepRecord> = Vec::with_capacity(tokens.len());
    let init = params.initial_state();
    for &tok in tokens {
        let prev = steps.last().map_or(&init, |s| &s.state);
        let rec = lstm_step(tok, prev, params, dropout)?;
        steps.push(rec);
    }
    Ok(ForwardTrace {
        steps,
        dropout: dropout.cloned(),
    })
}

/// Model output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Scalar(f64),
    Distribution(Vector),
}

impl Prediction {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Prediction::Scalar(x) => Some(*x),
            Prediction::Distribution(_) => None,
        }
    }

    /// Most likely class (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        match self {
            Prediction::Scalar(_) => None,
            Prediction::Distribution(p) => {
                let mut best = 0;
                for (k, &x) in p.iter().enumerate() {
                    if x > p[best] {
                        best = k;
                    }
                }
                Some(best)
            }
        }
    }
}

/// Pre-activation of the head, `proj · h`.
pub fn head_preactivation(h: &[f64], params: &LstmParams) -> Result<Vec<f64>> {
    if h.len() != params.dims.hidden {
        return Err(Error::DimensionMismatch {
            op: "head input",
            expected: params.dims.hidden,
            found: h.len(),
        });
    }
    let mut u = vec![0.0; params.proj.rows()];
    linalg::matvec_into(&params.proj, h, &mut u);
    Ok(u)
}

/// `max(0, proj · h)`.
pub fn predict_regression(h: &Vector, params: &LstmParams) -> Result<f64> {
    if params.dims.head != Head::Regression {
        return Err(Error::TaskMismatch("regression head requested on a classifier"));
    }
    let u = head_preactivation(h.as_slice(), params)?;
    Ok(linalg::relu(u[0]))
}

/// `softmax(relu(proj · h))`.
pub fn predict_classification(h: &Vector, params: &LstmParams) -> Result<Vector> {
    if !matches!(params.dims.head, Head::Classification { .. }) {
        return Err(Error::TaskMismatch("classification head requested on a regressor"));
    }
    let u = head_preactivation(h.as_slice(), params)?;
    let r: Vec<f64> = u.into_iter().map(linalg::relu).collect();
    Ok(Vector::from(&softmax(&r)[..]))
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Decodes a hidden state through whichever head `params` carries.
pub fn decode(h: &Vector, params: &LstmParams) -> Result<Prediction> {
    match params.dims.head {
        Head::Regression => predict_regression(h, params).map(Prediction::Scalar),
        Head::Classification { .. } => {
            predict_classification(h, params).map(Prediction::Distribution)
        }
    }
}

/// Dropout-free prediction for a whole sequence.
pub fn predict(params: &LstmParams, tokens: &[usize]) -> Result<Prediction> {
    let trace = forward(params, tokens, None)?;
    decode(&trace.last_state().h, params)
}
