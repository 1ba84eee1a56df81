//! Softmax classifiers with hand-written backprop, plus momentum SGD.
//!
//! Parameter layout (flat, row-major):
//! * linear: `W[K×S]`, `b[K]`
//! * MLP: `W1[H×S]`, `b1[H]`, `W2[K×H]`, `b2[K]`, ReLU hidden layer
//!
//! Hidden weights start at `Normal(0, 2/S)`; the output layer starts at zero,
//! so a fresh model predicts the uniform distribution.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Trace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) probs: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    best
}

impl Classifier {
    pub fn new(arch: Architecture, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch, input_dim, num_classes)?;
        if let Architecture::Mlp { hidden } = arch {
            let normal = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("positive std");
            let mut rng = rng::seeded(seed);
            for w in &mut model.params[..hidden * input_dim] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs input_dim >= 1 and num_classes >= 2, got {input_dim} and {num_classes}"
            )));
        }
        if matches!(arch, Architecture::Mlp { hidden: 0 }) {
            return Err(Error::InvalidArgument("MLP hidden width must be at least 1".into()));
        }
        let n = Self::param_count(arch, input_dim, num_classes);
        Ok(Self { arch, input_dim, num_classes, params: vec![0.0; n] })
    }

    pub fn from_params(arch: Architecture, input_dim: usize, num_classes: usize, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(arch, input_dim, num_classes)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch { expected: model.params.len(), got: params.len() });
        }
        model.params = params;
        Ok(model)
    }

    pub fn param_count(arch: Architecture, input_dim: usize, num_classes: usize) -> usize {
        match arch {
            Architecture::Linear => num_classes * input_dim + num_classes,
            Architecture::Mlp { hidden } => hidden * input_dim + hidden + num_classes * hidden + num_classes,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() })
        }
    }

    /// Affine map `out = W·x + b` with `W` stored row-major in `w`.
    fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        b.iter().zip(w.chunks_exact(x.len())).map(|(bias, row)| bias + dot(row, x)).collect()
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let (s, k) = (self.input_dim, self.num_classes);
        match self.arch {
            Architecture::Linear => {
                let (w, b) = self.params.split_at(k * s);
                let probs = softmax(&Self::affine(w, b, x));
                Trace { hidden_pre: Vec::new(), hidden: Vec::new(), probs }
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * s);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let hidden_pre = Self::affine(w1, b1, x);
                let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
                let probs = softmax(&Self::affine(w2, b2, &hidden));
                Trace { hidden_pre, hidden, probs }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (s, k) = (self.input_dim, self.num_classes);
        Ok(match self.arch {
            Architecture::Linear => {
                let (w, b) = self.params.split_at(k * s);
                Self::affine(w, b, x)
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * s);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let a: Vec<f64> = Self::affine(w1, b1, x).into_iter().map(|v| v.max(0.0)).collect();
                Self::affine(w2, b2, &a)
            }
        })
    }

    /// Predicted class probabilities (max-shifted softmax of the logits).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).probs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Hidden-layer pre-activations, or `None` for the linear model.
    pub fn hidden_pre_activations(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        self.check_input(x)?;
        Ok(match self.arch {
            Architecture::Linear => None,
            Architecture::Mlp { .. } => Some(self.trace(x).hidden_pre),
        })
    }

    /// Adds `dL/dθ` for one sample to `grad`, given `dL/dprobs` and the trace
    /// of the forward pass on `x`.
    pub(crate) fn backprop(&self, x: &[f64], trace: &Trace, dprobs: &[f64], grad: &mut [f64]) {
        let (s, k) = (self.input_dim, self.num_classes);
        let p = &trace.probs;
        // softmax Jacobian: dz_k = p_k (g_k - Σ_j p_j g_j)
        let pg: Vec<f64> = p.iter().zip(dprobs).map(|(pk, gk)| if *gk == 0.0 { 0.0 } else { pk * gk }).collect();
        let inner: f64 = pg.iter().sum();
        let dz: Vec<f64> = pg.iter().zip(p).map(|(pgk, pk)| pgk - pk * inner).collect();
        match self.arch {
            Architecture::Linear => {
                let (gw, gb) = grad.split_at_mut(k * s);
                for (c, &d) in dz.iter().enumerate() {
                    for (g, xs) in gw[c * s..(c + 1) * s].iter_mut().zip(x) {
                        *g += d * xs;
                    }
                    gb[c] += d;
                }
            }
            Architecture::Mlp { hidden: h } => {
                let w2 = &self.params[h * s + h..h * s + h + k * h];
                let (gw1, rest) = grad.split_at_mut(h * s);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                let mut da = vec![0.0; h];
                for (c, &d) in dz.iter().enumerate() {
                    let row = &w2[c * h..(c + 1) * h];
                    for ((g, a), (dai, w)) in
                        gw2[c * h..(c + 1) * h].iter_mut().zip(&trace.hidden).zip(da.iter_mut().zip(row))
                    {
                        *g += d * a;
                        *dai += w * d;
                    }
                    gb2[c] += d;
                }
                for (j, (&pre, &d)) in trace.hidden_pre.iter().zip(&da).enumerate() {
                    if pre <= 0.0 {
                        continue;
                    }
                    for (g, xs) in gw1[j * s..(j + 1) * s].iter_mut().zip(x) {
                        *g += d * xs;
                    }
                    gb1[j] += d;
                }
            }
        }
    }

    /// Summed parameter gradient over a batch, given each sample's loss
    /// gradient with respect to its predicted probabilities.
    pub fn backward(&self, batch: &[&[f64]], loss_grad_at_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if batch.len() != loss_grad_at_probs.len() {
            return Err(Error::LengthMismatch(format!(
                "{} samples but {} loss gradients",
                batch.len(),
                loss_grad_at_probs.len()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        for (x, g) in batch.iter().zip(loss_grad_at_probs) {
            self.check_input(x)?;
            if g.len() != self.num_classes {
                return Err(Error::DimensionMismatch { expected: self.num_classes, got: g.len() });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("loss gradient is not finite".into()));
            }
            let trace = self.trace(x);
            self.backprop(x, &trace, g, &mut grad);
        }
        Ok(grad)
    }

    /// One momentum-SGD step at learning rate `lr`.
    pub fn sgd_step(&mut self, grad: &[f64], cfg: &OptimizerConfig, lr: f64, velocity: &mut [f64]) -> Result<()> {
        sgd_step(&mut self.params, grad, cfg, lr, velocity)
    }

    /// Writes a checkpoint: one JSON header line, then the parameters as
    /// little-endian `f64`.
    pub fn save_checkpoint<W: Write>(&self, mut writer: W, epoch: usize) -> Result<()> {
        let header = CheckpointHeader {
            architecture: self.arch,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            num_params: self.params.len(),
            epoch,
        };
        serde_json::to_writer(&mut writer, &header)?;
        writer.write_all(b"\n")?;
        for p in &self.params {
            writer.write_all(&p.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load_checkpoint<R: BufRead>(mut reader: R) -> Result<(Self, CheckpointHeader)> {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        let mut bytes = vec![0u8; header.num_params * 8];
        reader.read_exact(&mut bytes)?;
        let params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let model = Self::from_params(header.architecture, header.input_dim, header.num_classes, params)?;
        Ok((model, header))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub num_params: usize,
    pub epoch: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multiply the learning rate by `factor` from `epoch` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: Vec<LrDecay>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 50,
            lr_decay: vec![LrDecay { epoch: 25, factor: 0.1 }],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::InvalidConfig { field: field.into(), message });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("optimizer.learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("optimizer.momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("optimizer.weight_decay", format!("must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("optimizer.batch_size", "must be at least 1".into());
        }
        if let Some(d) = self.lr_decay.iter().find(|d| !(d.factor > 0.0 && d.factor.is_finite())) {
            return bad("optimizer.lr_decay", format!("factor must be positive, got {}", d.factor));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_decay.iter().filter(|d| epoch >= d.epoch).fold(self.learning_rate, |lr, d| lr * d.factor)
    }
}

/// `v ← momentum·v + grad + weight_decay·θ`, then `θ ← θ − lr·v`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], cfg: &OptimizerConfig, lr: f64, velocity: &mut [f64]) -> Result<()> {
    if grad.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: grad.len().min(velocity.len()) });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged("non-finite gradient".into()));
    }
    for ((theta, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *theta;
        *theta -= lr * *v;
    }
    if params.iter().any(|t| !t.is_finite()) {
        return Err(Error::TrainingDiverged("non-finite parameters after update".into()));
    }
    Ok(())
}
