//! Small dense networks with hand-written backpropagation and minibatch SGD.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};

/// Clamp for probabilities entering a logarithm.
pub const PROB_EPS: f64 = 1e-7;

const NET_FORMAT: &str = "chancepred-net";
const NET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Row-major `output_dim x input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.input_dim..(o + 1) * self.input_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    /// Nonzero input positions when the input is mostly zeros.
    sparse_input: Option<Vec<usize>>,
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("nets have at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Flattened in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidParameter(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let limit = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Layer {
                    input_dim: d[0],
                    output_dim: d[1],
                    activation,
                    weights: (0..d[0] * d[1]).map(|_| rng.gen_range(-limit..=limit)).collect(),
                    bias: vec![0.0; d[1]],
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("net without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.input_dim * l.output_dim || l.bias.len() != l.output_dim {
                return Err(Error::InvalidParameter(format!("layer {i} has inconsistent shapes")));
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(Error::InvalidParameter(format!("layer {i} has non-finite weights")));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_dim,
                    got: pair[1].input_dim,
                });
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened in the same order as [`Gradients::flatten`].
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = value;
                return;
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                l.bias[i] = value;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.trace(input)?;
        Ok(trace.outputs.pop().expect("nonempty"))
    }

    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let nonzero: Vec<usize> = (0..input.len()).filter(|&i| input[i] != 0.0).collect();
        let sparse_input = (nonzero.len() * 2 < input.len()).then_some(nonzero);
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if li == 0 { input } else { &outputs[li - 1] };
            let out: Vec<f64> = (0..layer.output_dim)
                .map(|o| {
                    let row = layer.row(o);
                    let z = match (&sparse_input, li) {
                        (Some(nz), 0) => nz.iter().map(|&i| row[i] * x[i]).sum::<f64>(),
                        _ => row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
                    };
                    layer.activation.apply(z + layer.bias[o])
                })
                .collect();
            outputs.push(out);
        }
        Ok(Trace {
            input: input.to_vec(),
            sparse_input,
            outputs,
        })
    }

    /// Accumulates parameter gradients into `grads` given `output_grad`, the
    /// loss gradient with respect to the net's (post-activation) output.
    /// Returns the gradient with respect to the input when asked.
    pub fn backward_trace(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let mut upstream = output_grad.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let out = &trace.outputs[li];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(g, &a)| g * layer.activation.derivative_from_output(a))
                .collect();
            let x: &[f64] = if li == 0 { &trace.input } else { &trace.outputs[li - 1] };
            let gw = &mut grads.weights[li];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.bias[li][o] += d;
                let grow = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                match (&trace.sparse_input, li) {
                    (Some(nz), 0) => nz.iter().for_each(|&i| grow[i] += d * x[i]),
                    _ => grow.iter_mut().zip(x).for_each(|(g, v)| *g += d * v),
                }
            }
            if li == 0 && !want_input_grad {
                return None;
            }
            let mut dx = vec![0.0; layer.input_dim];
            for (o, &d) in dz.iter().enumerate() {
                if d != 0.0 {
                    dx.iter_mut().zip(layer.row(o)).for_each(|(g, w)| *g += d * w);
                }
            }
            upstream = dx;
        }
        Some(upstream)
    }

    /// Exact gradient of `loss(kind, forward(input), target)`.
    pub fn backward(&self, input: &[f64], target: &Target, kind: LossKind) -> Result<Gradients> {
        let trace = self.trace(input)?;
        let g = loss_grad(kind, trace.output(), target)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_trace(&trace, &g, &mut grads, false);
        Ok(grads)
    }

    /// `params -= step * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, step: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weights
                .iter_mut()
                .zip(&grads.weights[li])
                .for_each(|(w, g)| *w -= step * g);
            layer.bias.iter_mut().zip(&grads.bias[li]).for_each(|(b, g)| *b -= step * g);
        }
    }

    pub fn to_file(&self) -> NetFile {
        NetFile {
            format: NET_FORMAT.into(),
            version: NET_VERSION,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self.layers.clone(),
        }
    }

    pub fn from_file(file: NetFile) -> Result<Self> {
        if file.format != NET_FORMAT {
            return Err(Error::InvalidParameter(format!("unknown net format `{}`", file.format)));
        }
        if file.version != NET_VERSION {
            return Err(Error::VersionMismatch {
                found: file.version,
                expected: NET_VERSION,
            });
        }
        let net = DenseNet::from_layers(file.layers)?;
        if net.input_dim() != file.input_dim || net.output_dim() != file.output_dim {
            return Err(Error::InvalidParameter("net file dims disagree with layers".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: NetFile =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        DenseNet::from_file(file)
    }
}

/// On-disk form of a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

impl Serialize for DenseNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        DenseNet::from_file(NetFile::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross entropy over the softmax of raw logits, via log-sum-exp.
    Ce,
    /// Binary cross entropy on probabilities, averaged over elements.
    Bce,
    /// Mean squared error.
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

fn values(target: &Target, len: usize) -> Result<&[f64]> {
    match target {
        Target::Values(v) if v.len() == len => Ok(v),
        Target::Values(v) => Err(Error::DimensionMismatch {
            expected: len,
            got: v.len(),
        }),
        Target::Class(_) => Err(Error::InvalidParameter("class target for an elementwise loss".into())),
    }
}

fn class(target: &Target, len: usize) -> Result<usize> {
    match target {
        Target::Class(c) if *c < len => Ok(*c),
        Target::Class(c) => Err(Error::DimensionMismatch {
            expected: len,
            got: *c + 1,
        }),
        Target::Values(_) => Err(Error::InvalidParameter("value target for cross entropy".into())),
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn loss(kind: LossKind, prediction: &[f64], target: &Target) -> Result<f64> {
    if prediction.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let n = prediction.len() as f64;
    Ok(match kind {
        LossKind::Ce => {
            let c = class(target, prediction.len())?;
            let max = prediction.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + prediction.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            lse - prediction[c]
        }
        LossKind::Bce => {
            let t = values(target, prediction.len())?;
            prediction
                .iter()
                .zip(t)
                .map(|(&p, &y)| {
                    let p = clamp_prob(p);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
        LossKind::Mse => {
            let t = values(target, prediction.len())?;
            prediction.iter().zip(t).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n
        }
    })
}

/// Gradient of [`loss`] with respect to `prediction`. For `Ce` the
/// prediction is the logit vector.
pub fn loss_grad(kind: LossKind, prediction: &[f64], target: &Target) -> Result<Vec<f64>> {
    let n = prediction.len() as f64;
    Ok(match kind {
        LossKind::Ce => {
            let c = class(target, prediction.len())?;
            softmax(prediction)
                .iter()
                .enumerate()
                .map(|(j, &pj)| pj - if j == c { 1.0 } else { 0.0 })
                .collect()
        }
        LossKind::Bce => {
            let t = values(target, prediction.len())?;
            prediction
                .iter()
                .zip(t)
                .map(|(&p, &y)| {
                    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                        0.0
                    } else {
                        (p - y) / (p * (1.0 - p)) / n
                    }
                })
                .collect()
        }
        LossKind::Mse => {
            let t = values(target, prediction.len())?;
            prediction.iter().zip(t).map(|(p, y)| 2.0 * (p - y) / n).collect()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_reduction_factor: f64,
    /// Epochs without improvement before the learning rate is reduced.
    pub patience_epochs: usize,
    /// Epochs without improvement before training stops.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Rescales each minibatch gradient to at most this norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 128,
            max_epochs: 100,
            lr_reduction_factor: 0.1,
            patience_epochs: 5,
            early_stop_patience: 15,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.patience_epochs == 0 || self.early_stop_patience == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "patiences and batch size must be >= 1".into(),
            ));
        }
        if !(self.lr_reduction_factor > 0.0 && self.lr_reduction_factor <= 1.0) {
            return Err(Error::InvalidParameter("lr_reduction_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Plateau learning-rate reduction plus early stopping on the epoch loss.
#[derive(Debug, Clone)]
pub struct Schedule {
    cfg: TrainConfig,
    lr: f64,
    best: f64,
    since_best: usize,
    since_reduce: usize,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Schedule {
            cfg: *cfg,
            lr: cfg.learning_rate,
            best: f64::INFINITY,
            since_best: 0,
            since_reduce: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Records an epoch loss; returns false once training should stop.
    pub fn observe(&mut self, epoch_loss: f64) -> bool {
        if epoch_loss < self.best - 1e-4 * self.best.abs().min(1e300) {
            self.best = epoch_loss;
            self.since_best = 0;
            self.since_reduce = 0;
            return true;
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_reduce >= self.cfg.patience_epochs {
            self.lr *= self.cfg.lr_reduction_factor;
            self.since_reduce = 0;
        }
        self.since_best < self.cfg.early_stop_patience
    }
}

/// Training examples, materialized on demand. `rng` lets sources apply
/// random augmentation.
pub trait ExampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn example(&self, index: usize, rng: &mut Rng) -> (Vec<f64>, Target);
}

impl ExampleSource for [(Vec<f64>, Target)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn example(&self, index: usize, _rng: &mut Rng) -> (Vec<f64>, Target) {
        self[index].clone()
    }
}

impl ExampleSource for Vec<(Vec<f64>, Target)> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn example(&self, index: usize, _rng: &mut Rng) -> (Vec<f64>, Target) {
        self[index].clone()
    }
}

pub(crate) fn clip(grads: &mut Gradients, max_norm: Option<f64>) {
    if let Some(limit) = max_norm {
        let norm = grads.norm();
        if norm > limit {
            grads.scale(limit / norm);
        }
    }
}

/// Like [`clip`] over the joint norm of two gradient sets.
pub fn clip_pair(a: &mut Gradients, b: &mut Gradients, max_norm: Option<f64>) {
    if let Some(limit) = max_norm {
        let norm = a.norm().hypot(b.norm());
        if norm > limit {
            a.scale(limit / norm);
            b.scale(limit / norm);
        }
    }
}

/// Minibatch SGD. Returns the trained net and the mean training loss of each
/// epoch.
pub fn sgd_train(
    net: &DenseNet,
    data: &dyn ExampleSource,
    kind: LossKind,
    cfg: &TrainConfig,
) -> Result<(DenseNet, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = net.clone();
    let mut rng = rng_from(cfg.seed);
    let mut schedule = Schedule::new(cfg);
    let mut grads = Gradients::zeros_like(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let (x, t) = data.example(i, &mut rng);
                let trace = net.trace(&x)?;
                total += loss(kind, trace.output(), &t)?;
                let g = loss_grad(kind, trace.output(), &t)?;
                net.backward_trace(&trace, &g, &mut grads, false);
            }
            grads.scale(1.0 / batch.len() as f64);
            clip(&mut grads, cfg.grad_clip);
            net.apply_gradients(&grads, schedule.learning_rate());
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(epoch_loss);
        if !schedule.observe(epoch_loss) {
            break;
        }
    }
    Ok((net, history))
}
