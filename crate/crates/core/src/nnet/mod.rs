//! A small dense/recurrent network library with exact reverse-mode
//! gradients.
//!
//! Every model in the pipeline (pilots, assistants, the crash predictor,
//! RL actors, critics and discriminators) is one of four architectures:
//! a multilayer perceptron or a stack of vanilla RNN, LSTM or GRU layers
//! followed by an affine output head. Weights live in one flat `Vec<f64>`
//! indexed through a shape table, which makes optimizer updates, Polyak
//! averaging and serialization simple loops over a slice.
//!
//! Recurrent stacks start from a zero hidden state, consume the whole input
//! sequence and apply the head to the last hidden state of the top layer.

mod adam;
mod compute;
mod io;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub use adam::AdamState;
pub use compute::{OutputGrad, Trace};
pub use io::{load, save, WeightFile, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Rnn,
    Lstm,
    Gru,
}

impl Arch {
    pub fn is_recurrent(self) -> bool {
        !matches!(self, Arch::Mlp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Rnn => "rnn",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Arch::Mlp),
            "rnn" => Ok(Arch::Rnn),
            "lstm" => Ok(Arch::Lstm),
            "gru" => Ok(Arch::Gru),
            other => Err(Error::UnsupportedArch(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
    Sigmoid,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

/// Architecture description. For recurrent nets `hidden_dims` lists the
/// widths of the stacked recurrent layers; for an MLP it lists the dense
/// hidden layers (possibly none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: Arch,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: Activation,
    /// Nonlinearity between MLP layers. Recurrent cells have fixed
    /// activations and ignore it.
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
}

impl NetworkSpec {
    pub fn mlp(input: usize, hidden: &[usize], output: usize, head: Activation) -> Self {
        NetworkSpec {
            arch: Arch::Mlp,
            input_dim: input,
            hidden_dims: hidden.to_vec(),
            output_dim: output,
            output_activation: head,
            hidden_activation: Activation::Relu,
        }
    }

    pub fn recurrent(
        arch: Arch,
        input: usize,
        hidden: &[usize],
        output: usize,
        head: Activation,
    ) -> Self {
        NetworkSpec {
            arch,
            input_dim: input,
            hidden_dims: hidden.to_vec(),
            output_dim: output,
            output_activation: head,
            hidden_activation: Activation::Tanh,
        }
    }

    pub fn with_hidden_activation(mut self, act: Activation) -> Self {
        self.hidden_activation = act;
        self
    }

    pub fn recurrent_flag(&self) -> bool {
        self.arch.is_recurrent()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "network dims must be >= 1: input {}, hidden {:?}, output {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        if self.arch.is_recurrent() && self.hidden_dims.is_empty() {
            return Err(Error::Config(format!(
                "{} needs at least one recurrent layer",
                self.arch
            )));
        }
        if self.output_activation == Activation::Relu {
            return Err(Error::Config("relu is not an output activation".into()));
        }
        Ok(())
    }

    /// The shape table in storage order.
    pub fn layout(&self) -> Vec<ShapeEntry> {
        let mut shapes = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize| {
            shapes.push(ShapeEntry { name, rows, cols });
        };
        let mut prev = self.input_dim;
        for (l, &h) in self.hidden_dims.iter().enumerate() {
            match self.arch {
                Arch::Mlp => {
                    push(format!("dense{l}.w"), h, prev);
                    push(format!("dense{l}.b"), h, 1);
                }
                Arch::Rnn => {
                    push(format!("rnn{l}.wx"), h, prev);
                    push(format!("rnn{l}.wh"), h, h);
                    push(format!("rnn{l}.b"), h, 1);
                }
                Arch::Gru => {
                    for gate in ["z", "r", "h"] {
                        push(format!("gru{l}.w{gate}"), h, prev);
                        push(format!("gru{l}.u{gate}"), h, h);
                        push(format!("gru{l}.b{gate}"), h, 1);
                    }
                }
                Arch::Lstm => {
                    for gate in ["i", "f", "o", "g"] {
                        push(format!("lstm{l}.w{gate}"), h, prev);
                        push(format!("lstm{l}.u{gate}"), h, h);
                        push(format!("lstm{l}.b{gate}"), h, 1);
                    }
                }
            }
            prev = h;
        }
        push("head.w".into(), self.output_dim, prev);
        push("head.b".into(), self.output_dim, 1);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ShapeEntry::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ShapeEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_bias(&self) -> bool {
        self.cols == 1 && self.name.rsplit('.').next().is_some_and(|s| s.starts_with('b'))
    }
}

/// Flat weight storage plus the shape table that slices it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    data: Vec<f64>,
    shapes: Vec<ShapeEntry>,
    offsets: Vec<usize>,
}

impl Parameters {
    pub fn from_parts(shapes: Vec<ShapeEntry>, data: Vec<f64>) -> Result<Self> {
        let total: usize = shapes.iter().map(ShapeEntry::len).sum();
        if total != data.len() {
            return Err(Error::Shape(format!(
                "shape table covers {total} values but {} were supplied",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite weight at index {i}")));
        }
        let offsets = shapes
            .iter()
            .scan(0usize, |acc, s| {
                let o = *acc;
                *acc += s.len();
                Some(o)
            })
            .collect();
        Ok(Parameters {
            data,
            shapes,
            offsets,
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let shapes = spec.layout();
        let n = shapes.iter().map(ShapeEntry::len).sum();
        Parameters::from_parts(shapes, vec![0.0; n]).expect("layout is consistent")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shapes(&self) -> &[ShapeEntry] {
        &self.shapes
    }

    pub(crate) fn offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    pub(crate) fn matrix(&self, idx: usize) -> ArrayView2<'_, f64> {
        let s = &self.shapes[idx];
        let o = self.offsets[idx];
        ArrayView2::from_shape((s.rows, s.cols), &self.data[o..o + s.len()])
            .expect("shape table is consistent")
    }

    pub fn get(&self, name: &str) -> Option<Array2<f64>> {
        let idx = self.shapes.iter().position(|s| s.name == name)?;
        Some(self.matrix(idx).to_owned())
    }

    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let idx = self
            .shapes
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Shape(format!("no tensor named {name}")))?;
        let s = &self.shapes[idx];
        if values.len() != s.len() {
            return Err(Error::Dimension {
                context: name.to_string(),
                expected: s.len(),
                got: values.len(),
            });
        }
        let o = self.offsets[idx];
        self.data[o..o + values.len()].copy_from_slice(values);
        Ok(())
    }

    /// `self ← tau·online + (1 − tau)·self`, elementwise.
    pub fn polyak_update(&mut self, online: &Parameters, tau: f64) {
        for (t, &o) in self.data.iter_mut().zip(&online.data) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }

    pub(crate) fn check_matches(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.layout();
        if expected != self.shapes {
            return Err(Error::Shape(format!(
                "parameters do not match {} spec ({} tensors expected, {} present)",
                spec.arch,
                expected.len(),
                self.shapes.len()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Parameters> {
    let mut rng = seeded(seed);
    init_with(spec, &mut rng)
}

pub fn init_with(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Parameters> {
    spec.validate()?;
    let mut params = Parameters::zeros(spec);
    for idx in 0..params.shapes.len() {
        let s = params.shapes[idx].clone();
        if s.is_bias() {
            continue;
        }
        let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
        let o = params.offsets[idx];
        for v in &mut params.data[o..o + s.len()] {
            *v = rng.gen_range(-limit..limit);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Bce,
}

/// One supervised example: an input sequence and its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// A spec bundled with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Parameters,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        params.check_matches(&spec)?;
        Ok(Network { spec, params })
    }

    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = init(&spec, seed)?;
        Ok(Network { spec, params })
    }

    pub fn init_with(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let params = init_with(&spec, rng)?;
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        let params = Parameters::zeros(&spec);
        Network { spec, params }
    }

    /// Output for a single input sequence. An MLP takes a sequence of
    /// exactly one vector.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let steps = stack_one(inputs, self.spec.input_dim)?;
        let out = self.predict_batch(&steps)?;
        Ok(out.row(0).to_vec())
    }

    /// Batched output without keeping a trace. `steps[t]` is a
    /// `batch × input_dim` matrix.
    pub fn predict_batch(&self, steps: &[Array2<f64>]) -> Result<Array2<f64>> {
        Ok(self.forward_batch(steps)?.output)
    }

    /// Mean loss and its exact gradient over `batch`.
    pub fn loss_and_gradients(&self, batch: &[Sample], loss: Loss) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let (steps, targets) = stack_samples(batch, self.spec.input_dim, self.spec.output_dim)?;
        let trace = self.forward_batch(&steps)?;
        let (value, grad) = loss_terms(&trace, &targets, loss, self.spec.output_activation)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&trace, grad, &mut grads)?;
        Ok((value, grads))
    }

    /// Mean loss only.
    pub fn loss(&self, batch: &[Sample], loss: Loss) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("evaluation batch"));
        }
        let (steps, targets) = stack_samples(batch, self.spec.input_dim, self.spec.output_dim)?;
        let trace = self.forward_batch(&steps)?;
        Ok(loss_terms(&trace, &targets, loss, self.spec.output_activation)?.0)
    }
}

/// Free-function form of [`Network::loss_and_gradients`].
pub fn gradients(
    spec: &NetworkSpec,
    params: &Parameters,
    batch: &[Sample],
    loss: Loss,
) -> Result<Vec<f64>> {
    let net = Network::new(spec.clone(), params.clone())?;
    Ok(net.loss_and_gradients(batch, loss)?.1)
}

/// Free-function form of [`Network::forward`].
pub fn forward(spec: &NetworkSpec, params: &Parameters, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    params.check_matches(spec)?;
    let steps = stack_one(inputs, spec.input_dim)?;
    let trace = compute::forward(spec, params, &steps)?;
    Ok(trace.output.row(0).to_vec())
}

fn loss_terms(
    trace: &Trace,
    targets: &Array2<f64>,
    loss: Loss,
    head: Activation,
) -> Result<(f64, OutputGrad)> {
    let out = &trace.output;
    let (b, k) = out.dim();
    let n = b as f64;
    let mut total = 0.0;
    match loss {
        Loss::Mse => {
            let mut g = Array2::zeros((b, k));
            for i in 0..b {
                let mut li = 0.0;
                for j in 0..k {
                    let e = out[[i, j]] - targets[[i, j]];
                    li += e * e / k as f64;
                    g[[i, j]] = 2.0 * e / (k as f64 * n);
                }
                if !li.is_finite() {
                    return Err(Error::NonFiniteLoss { index: i });
                }
                total += li;
            }
            Ok((total / n, OutputGrad::Activated(g)))
        }
        Loss::Bce => {
            if head != Activation::Sigmoid {
                return Err(Error::Config("BCE loss needs a sigmoid head".into()));
            }
            // Work from logits so saturated probabilities keep finite gradients.
            let z = trace.head_pre();
            let mut g = Array2::zeros((b, k));
            for i in 0..b {
                let mut li = 0.0;
                for j in 0..k {
                    let (zi, t) = (z[[i, j]], targets[[i, j]]);
                    li += (zi.max(0.0) - zi * t + (-zi.abs()).exp().ln_1p()) / k as f64;
                    g[[i, j]] = (sigmoid(zi) - t) / (k as f64 * n);
                }
                if !li.is_finite() {
                    return Err(Error::NonFiniteLoss { index: i });
                }
                total += li;
            }
            Ok((total / n, OutputGrad::PreActivation(g)))
        }
    }
}

pub(crate) fn stack_one(inputs: &[Vec<f64>], input_dim: usize) -> Result<Vec<Array2<f64>>> {
    if inputs.is_empty() {
        return Err(Error::Empty("input sequence"));
    }
    inputs
        .iter()
        .map(|x| {
            if x.len() != input_dim {
                return Err(Error::Dimension {
                    context: "network input".into(),
                    expected: input_dim,
                    got: x.len(),
                });
            }
            Ok(Array2::from_shape_vec((1, input_dim), x.clone()).expect("length checked"))
        })
        .collect()
}

/// Stacks equal-length sequences into per-step batch matrices.
pub fn stack_sequences(seqs: &[&[Vec<f64>]], input_dim: usize) -> Result<Vec<Array2<f64>>> {
    let first = seqs.first().ok_or(Error::Empty("batch"))?;
    let len = first.len();
    if len == 0 {
        return Err(Error::Empty("input sequence"));
    }
    let b = seqs.len();
    let mut steps = vec![Array2::zeros((b, input_dim)); len];
    for (i, seq) in seqs.iter().enumerate() {
        if seq.len() != len {
            return Err(Error::Dimension {
                context: format!("sequence length of batch item {i}"),
                expected: len,
                got: seq.len(),
            });
        }
        for (t, x) in seq.iter().enumerate() {
            if x.len() != input_dim {
                return Err(Error::Dimension {
                    context: format!("input vector of batch item {i}"),
                    expected: input_dim,
                    got: x.len(),
                });
            }
            steps[t].row_mut(i).iter_mut().zip(x).for_each(|(d, s)| *d = *s);
        }
    }
    Ok(steps)
}

fn stack_samples(
    batch: &[Sample],
    input_dim: usize,
    output_dim: usize,
) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let seqs: Vec<&[Vec<f64>]> = batch.iter().map(|s| s.inputs.as_slice()).collect();
    let steps = stack_sequences(&seqs, input_dim)?;
    let mut targets = Array2::zeros((batch.len(), output_dim));
    for (i, s) in batch.iter().enumerate() {
        if s.target.len() != output_dim {
            return Err(Error::Dimension {
                context: format!("target of batch item {i}"),
                expected: output_dim,
                got: s.target.len(),
            });
        }
        targets.row_mut(i).iter_mut().zip(&s.target).for_each(|(d, v)| *d = *v);
    }
    Ok((steps, targets))
}
