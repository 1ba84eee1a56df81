//! Dynamic sample sieve: alternate confidence-regularized training on the
//! currently kept samples with a from-scratch re-selection of every sample.
//!
//! Within one run the epoch `t` proceeds as
//! 1. train one epoch on samples with `v = 1` at `β = schedule.beta_at(t)`;
//! 2. if `t >= sieve_start`, recompute every `v_n` from a snapshot of the
//!    freshly trained model.
//!
//! Samples with `v = 0` still go through the forward pass for thresholds and
//! metrics but contribute no gradient.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::loss::{
    cr_term, cr_term_grad, cross_entropy, cross_entropy_grad, sieve_decision, sieve_threshold, BetaSchedule, NoisyPrior,
};
use crate::metrics::{loss_histogram, sieve_report, test_accuracy, LossRecord, SieveReport};
use crate::model::{Architecture, Classifier, OptimizerConfig};
use crate::rng;
use crate::{Error, Result};

const INIT_STREAM: u64 = 0x1417_1A11_5EED;

/// How a mini-batch gradient is averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormalization {
    /// Divide by the number of kept samples in the batch.
    #[default]
    SelectedCount,
    /// Divide by the full batch length.
    BatchSize,
}

/// Mini-batch SGD driver owning the momentum buffer and the data order.
///
/// The epoch-`t` order is a shuffle of `0..N` drawn from
/// `rng::seeded(rng::derive(train_seed, t))`.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub opt: OptimizerConfig,
    pub normalization: BatchNormalization,
    train_seed: u64,
    velocity: Vec<f64>,
}

impl Trainer {
    pub fn new(model: &Classifier, opt: OptimizerConfig, normalization: BatchNormalization, train_seed: u64) -> Self {
        Self { opt, normalization, train_seed, velocity: vec![0.0; model.params().len()] }
    }

    pub fn epoch_order(&self, num_samples: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..num_samples).collect();
        order.shuffle(&mut rng::seeded(rng::derive(self.train_seed, epoch as u64)));
        order
    }

    pub(crate) fn step(&mut self, model: &mut Classifier, grad: &[f64], epoch: usize) -> Result<()> {
        let lr = self.opt.lr_at(epoch);
        model.sgd_step(grad, &self.opt, lr, &mut self.velocity)
    }

    /// One epoch minimizing `Σ_n v_n [ℓ(f(x_n), ỹ_n) + ℓ_CR(f(x_n))]`.
    /// Returns the mean regularized loss over kept samples (0 if none).
    pub fn regularized_epoch(
        &mut self,
        model: &mut Classifier,
        data: &LabeledDataset,
        v: &[bool],
        prior: &NoisyPrior,
        beta: f64,
        epoch: usize,
    ) -> Result<f64> {
        if v.len() != data.len() {
            return Err(Error::LengthMismatch(format!("{} flags for {} samples", v.len(), data.len())));
        }
        let mut total = 0.0;
        let mut kept = 0usize;
        let mut grad = vec![0.0; model.params().len()];
        for batch in self.epoch_order(data.len(), epoch).chunks(self.opt.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut count = 0usize;
            for &n in batch.iter().filter(|&&n| v[n]) {
                let x = data.row(n);
                let y = data.noisy_labels()[n];
                let trace = model.trace(x);
                let probs = &trace.probs;
                total += cross_entropy(probs, y) + cr_term(probs, prior, beta);
                let mut dprobs = cross_entropy_grad(probs, y);
                if beta != 0.0 {
                    for (d, c) in dprobs.iter_mut().zip(cr_term_grad(probs, prior, beta)) {
                        *d += c;
                    }
                }
                model.backprop(x, &trace, &dprobs, &mut grad);
                count += 1;
            }
            if count == 0 {
                continue;
            }
            let denom = match self.normalization {
                BatchNormalization::SelectedCount => count,
                BatchNormalization::BatchSize => batch.len(),
            } as f64;
            grad.iter_mut().for_each(|g| *g /= denom);
            self.step(model, &grad, epoch)?;
            kept += count;
        }
        if !total.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite loss at epoch {epoch}")));
        }
        Ok(if kept == 0 { 0.0 } else { total / kept as f64 })
    }
}

/// Per-sample sieve flags and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveState {
    /// `true` = treated as clean.
    pub v: Vec<bool>,
    pub epoch: usize,
    pub beta: f64,
    /// `α_{n,t}` from the latest sieve; empty before the first one.
    pub thresholds: Vec<f64>,
    pub history: Vec<SieveReport>,
}

impl SieveState {
    /// Every sample starts as clean.
    pub fn new(num_samples: usize) -> Self {
        Self { v: vec![true; num_samples], epoch: 0, beta: 0.0, thresholds: Vec::new(), history: Vec::new() }
    }

    pub fn num_selected(&self) -> usize {
        self.v.iter().filter(|&&b| b).count()
    }
}

/// Recomputes every `v_n` and `α_{n,t}` from `model` (used as a read-only
/// snapshot). Selection starts from scratch; previous flags are ignored.
pub fn sieve_epoch(
    model: &Classifier,
    data: &LabeledDataset,
    state: &mut SieveState,
    prior: &NoisyPrior,
    beta: f64,
    epoch: usize,
) -> Result<()> {
    let mut v = Vec::with_capacity(data.len());
    let mut thresholds = Vec::with_capacity(data.len());
    for (x, &y) in data.rows().zip(data.noisy_labels()) {
        let probs = model.forward(x)?;
        thresholds.push(sieve_threshold(&probs, prior, beta));
        v.push(sieve_decision(&probs, y, prior, beta));
    }
    state.v = v;
    state.thresholds = thresholds;
    state.epoch = epoch;
    state.beta = beta;
    Ok(())
}

/// Indices with `f(x_n)[ỹ_n] > 1/K` that are nevertheless flagged `v = 0`.
/// Always empty for flags produced by [`sieve_epoch`] on the same model.
pub fn retention_violations(model: &Classifier, data: &LabeledDataset, v: &[bool]) -> Result<Vec<usize>> {
    let chance = 1.0 / data.num_classes() as f64;
    let mut out = Vec::new();
    for n in 0..data.len() {
        let p = model.forward(data.row(n))?;
        if p[data.noisy_labels()[n]] > chance && !v[n] {
            out.push(n);
        }
    }
    Ok(out)
}

/// Settings of one CORES² run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresConfig {
    pub architecture: Architecture,
    pub optimizer: OptimizerConfig,
    pub schedule: BetaSchedule,
    /// First epoch after which the sieve runs; `None` disables sieving.
    pub sieve_start: Option<usize>,
    pub normalization: BatchNormalization,
    pub train_seed: u64,
    /// Epochs after which the centered-loss histogram is captured.
    pub histogram_epochs: Vec<usize>,
}

impl CoresConfig {
    /// Desk-scale defaults: 50 epochs, β warm-up 5 and ramp 15, sieving from
    /// epoch 20.
    pub fn desk_scale(num_classes: usize, architecture: Architecture) -> Self {
        let schedule = BetaSchedule::desk_scale(num_classes);
        Self {
            architecture,
            optimizer: OptimizerConfig::default(),
            sieve_start: Some(schedule.ramp_end()),
            schedule,
            normalization: BatchNormalization::default(),
            train_seed: 0,
            histogram_epochs: Vec::new(),
        }
    }

    /// Same run with the regularizer switched off: the sieve then reduces to
    /// a plain-CE small-loss selection.
    pub fn ce_baseline(&self) -> Self {
        Self { schedule: BetaSchedule { beta_max: 0.0, ..self.schedule }, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.schedule.beta_max >= 0.0 && self.schedule.beta_max.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "schedule.beta_max".into(),
                message: format!("must be non-negative, got {}", self.schedule.beta_max),
            });
        }
        Ok(())
    }
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub beta: f64,
    pub num_selected: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_loss: Option<f64>,
    /// Kept-probability-above-chance samples that were sieved out.
    pub retention_violations: usize,
}

#[derive(Debug, Clone)]
pub struct CoresRun {
    pub model: Classifier,
    pub state: SieveState,
    pub metrics: Vec<EpochMetrics>,
    pub prior: NoisyPrior,
    pub histograms: Vec<(usize, Vec<LossRecord>)>,
    pub(crate) trainer: Trainer,
}

impl CoresRun {
    pub fn final_report(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

/// Full CORES² run over `cfg.optimizer.epochs` epochs.
pub fn run_cores(data: &LabeledDataset, test: Option<&LabeledDataset>, cfg: &CoresConfig) -> Result<CoresRun> {
    run_sieve_phase(data, test, cfg, cfg.optimizer.epochs)
}

/// Runs epochs `0..epochs` of the sieve phase.
pub fn run_sieve_phase(
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &CoresConfig,
    epochs: usize,
) -> Result<CoresRun> {
    cfg.validate()?;
    let k = data.num_classes();
    let prior = NoisyPrior::from_labels(data.noisy_labels(), k)?;
    let mut model = Classifier::new(cfg.architecture, data.dim(), k, rng::derive(cfg.train_seed, INIT_STREAM))?;
    let mut trainer = Trainer::new(&model, cfg.optimizer.clone(), cfg.normalization, cfg.train_seed);
    let mut state = SieveState::new(data.len());
    let mut metrics = Vec::with_capacity(epochs);
    let mut histograms = Vec::new();

    for epoch in 0..epochs {
        let beta = cfg.schedule.beta_at(epoch);
        let train_loss = trainer.regularized_epoch(&mut model, data, &state.v, &prior, beta, epoch)?;
        let mut violations = 0;
        if cfg.sieve_start.is_some_and(|start| epoch >= start) {
            sieve_epoch(&model, data, &mut state, &prior, beta, epoch)?;
            violations = retention_violations(&model, data, &state.v)?.len();
        } else {
            state.epoch = epoch;
            state.beta = beta;
        }
        let report = sieve_report(&state.v, data.clean_labels(), data.noisy_labels())?;
        state.history.push(report);
        if cfg.histogram_epochs.contains(&epoch) {
            histograms.push((epoch, loss_histogram(&model, data, &prior, beta)?));
        }
        let test_acc = test.map(|t| test_accuracy(&model, t)).transpose()?;
        log::debug!(
            "epoch {epoch}: beta={beta:.3} selected={} f={:.4} loss={train_loss:.4}",
            report.num_selected,
            report.f_score
        );
        metrics.push(EpochMetrics {
            epoch,
            beta,
            num_selected: report.num_selected,
            precision: report.precision,
            recall: report.recall,
            f_score: report.f_score,
            train_loss,
            test_acc,
            ce_loss: None,
            kl_loss: None,
            retention_violations: violations,
        });
    }
    Ok(CoresRun { model, state, metrics, prior, histograms, trainer })
}
