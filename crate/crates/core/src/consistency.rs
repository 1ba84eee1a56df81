//! Post-sieve consistency training (CORES²★).
//!
//! After the split at epoch `τ`, samples in `L(τ)` (`v = 1`) keep training
//! with CE on their noisy labels. Samples in `H(τ)` (`v = 0`) lose their
//! labels; they contribute `KL(f̄(x_aug) ‖ f(x))`, where `f̄` is a frozen copy
//! of the model taken at the start of each epoch and `x_aug` is a jittered
//! copy of `x`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::loss::{cross_entropy, cross_entropy_grad, kl_consistency, kl_consistency_grad};
use crate::metrics::{sieve_report, test_accuracy};
use crate::model::Classifier;
use crate::rng;
use crate::sieve::{run_sieve_phase, CoresConfig, CoresRun, EpochMetrics, SieveState, Trainer};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    #[default]
    GaussianJitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    /// Jitter std as a fraction of each dimension's feature std.
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { kind: AugmentationKind::GaussianJitter, sigma_fraction: 0.1, seed: 0 }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fraction >= 0.0 && self.sigma_fraction.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "consistency.sigma_fraction".into(),
                message: format!("must be non-negative, got {}", self.sigma_fraction),
            });
        }
        Ok(())
    }
}

/// `x + N(0, (sigma_fraction · std_d)²)` per dimension, seeded by
/// `(spec.seed, epoch, index)`.
pub fn augment(x: &[f64], feature_std: &[f64], spec: &AugmentationSpec, epoch: usize, index: usize) -> Vec<f64> {
    if spec.sigma_fraction == 0.0 {
        return x.to_vec();
    }
    let mut rng = rng::seeded(rng::derive(rng::derive(spec.seed, epoch as u64), index as u64));
    x.iter()
        .zip(feature_std)
        .map(|(&v, &s)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + spec.sigma_fraction * s * z
        })
        .collect()
}

/// Read access to noisy labels, so tests can audit which ones get read.
pub trait NoisyLabels {
    fn noisy_label(&self, n: usize) -> usize;
}

impl NoisyLabels for LabeledDataset {
    fn noisy_label(&self, n: usize) -> usize {
        self.noisy_labels()[n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub augmentation: AugmentationSpec,
    /// Epoch whose sieve result fixes the split.
    pub tau: usize,
    /// Number of consistency epochs after `τ`.
    pub epochs: usize,
    pub kl_weight: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        // τ = ramp end + 5 of the desk schedule; total budget 50 epochs
        Self { augmentation: AugmentationSpec::default(), tau: 25, epochs: 24, kl_weight: 1.0 }
    }
}

impl ConsistencyConfig {
    /// Split at `τ = ramp_end + 5`; consistency fills the rest of `total_epochs`.
    pub fn for_budget(ramp_end: usize, total_epochs: usize) -> Self {
        let tau = ramp_end + 5;
        Self { tau, epochs: total_epochs.saturating_sub(tau + 1), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "consistency.kl_weight".into(),
                message: format!("must be non-negative, got {}", self.kl_weight),
            });
        }
        Ok(())
    }
}

/// Losses of one consistency epoch, each averaged over all `N` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyStats {
    pub ce_loss: f64,
    /// Unweighted KL part.
    pub kl_loss: f64,
    /// `ce_loss + kl_weight · kl_loss`.
    pub train_loss: f64,
    /// Mean KL over `H(τ)` members of each batch that has any.
    pub batch_kl: Vec<f64>,
}

/// One consistency epoch reading labels only through `labels`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_epoch_with<L: NoisyLabels + ?Sized>(
    model: &mut Classifier,
    trainer: &mut Trainer,
    data: &LabeledDataset,
    labels: &L,
    split: &[bool],
    feature_std: &[f64],
    cfg: &ConsistencyConfig,
    epoch: usize,
) -> Result<ConsistencyStats> {
    if split.len() != data.len() {
        return Err(Error::LengthMismatch(format!("split has {} flags for {} samples", split.len(), data.len())));
    }
    let snapshot = model.clone();
    let mut ce_total = 0.0;
    let mut kl_total = 0.0;
    let mut batch_kl = Vec::new();
    let mut grad = vec![0.0; model.params().len()];
    for batch in trainer.epoch_order(data.len(), epoch).chunks(trainer.opt.batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut kl_batch = 0.0;
        let mut kl_count = 0usize;
        for &n in batch {
            let x = data.row(n);
            let trace = model.trace(x);
            let dprobs = if split[n] {
                let y = labels.noisy_label(n);
                ce_total += cross_entropy(&trace.probs, y);
                cross_entropy_grad(&trace.probs, y)
            } else {
                let target = snapshot.forward(&augment(x, feature_std, &cfg.augmentation, epoch, n))?;
                let kl = kl_consistency(&trace.probs, &target);
                kl_total += kl;
                kl_batch += kl;
                kl_count += 1;
                kl_consistency_grad(&trace.probs, &target).into_iter().map(|g| cfg.kl_weight * g).collect()
            };
            model.backprop(x, &trace, &dprobs, &mut grad);
        }
        if kl_count > 0 {
            batch_kl.push(kl_batch / kl_count as f64);
        }
        grad.iter_mut().for_each(|g| *g /= batch.len() as f64);
        trainer.step(model, &grad, epoch)?;
    }
    let n = data.len() as f64;
    let (ce_loss, kl_loss) = (ce_total / n, kl_total / n);
    let train_loss = ce_loss + cfg.kl_weight * kl_loss;
    if !train_loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("non-finite consistency loss at epoch {epoch}")));
    }
    Ok(ConsistencyStats { ce_loss, kl_loss, train_loss, batch_kl })
}

pub fn consistency_epoch(
    model: &mut Classifier,
    trainer: &mut Trainer,
    data: &LabeledDataset,
    split: &SieveState,
    feature_std: &[f64],
    cfg: &ConsistencyConfig,
    epoch: usize,
) -> Result<ConsistencyStats> {
    consistency_epoch_with(model, trainer, data, data, &split.v, feature_std, cfg, epoch)
}

/// Continues `run` (which must stop at epoch `τ`) with consistency epochs
/// `τ+1 ..= τ+cfg.epochs`, appending one metrics row per epoch.
pub fn run_consistency_phase<L: NoisyLabels + ?Sized>(
    run: &mut CoresRun,
    data: &LabeledDataset,
    labels: &L,
    test: Option<&LabeledDataset>,
    cfg: &ConsistencyConfig,
) -> Result<()> {
    cfg.validate()?;
    let (_, feature_std) = data.feature_moments();
    let split = run.state.v.clone();
    let report = sieve_report(&split, data.clean_labels(), data.noisy_labels())?;
    for e in 0..cfg.epochs {
        let epoch = cfg.tau + 1 + e;
        let stats =
            consistency_epoch_with(&mut run.model, &mut run.trainer, data, labels, &split, &feature_std, cfg, epoch)?;
        let test_acc = test.map(|t| test_accuracy(&run.model, t)).transpose()?;
        run.metrics.push(EpochMetrics {
            epoch,
            beta: 0.0,
            num_selected: report.num_selected,
            precision: report.precision,
            recall: report.recall,
            f_score: report.f_score,
            train_loss: stats.train_loss,
            test_acc,
            ce_loss: Some(stats.ce_loss),
            kl_loss: Some(stats.kl_loss * cfg.kl_weight),
            retention_violations: 0,
        });
    }
    Ok(())
}

/// CORES² up to and including epoch `τ`, then consistency training.
pub fn run_cores_star(
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cores: &CoresConfig,
    cfg: &ConsistencyConfig,
) -> Result<CoresRun> {
    cfg.validate()?;
    let mut run = run_sieve_phase(data, test, cores, cfg.tau + 1)?;
    run_consistency_phase(&mut run, data, data, test, cfg)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{apply_symmetric_noise, make_blobs};
    use crate::model::{Architecture, OptimizerConfig};
    use crate::sieve::BatchNormalization;

    #[test]
    fn zero_sigma_is_identity_and_jitter_is_deterministic() {
        let x = [1.0, -2.0, 0.5];
        let std = [1.0, 2.0, 3.0];
        let id = AugmentationSpec { sigma_fraction: 0.0, ..Default::default() };
        assert_eq!(augment(&x, &std, &id, 3, 4), x.to_vec());
        let spec = AugmentationSpec { sigma_fraction: 0.1, seed: 9, ..Default::default() };
        assert_eq!(augment(&x, &std, &spec, 3, 4), augment(&x, &std, &spec, 3, 4));
        assert_ne!(augment(&x, &std, &spec, 3, 4), augment(&x, &std, &spec, 3, 5));
        assert_ne!(augment(&x, &std, &spec, 3, 4), augment(&x, &std, &spec, 4, 4));
    }

    #[test]
    fn jitter_std_matches_fraction() {
        let spec = AugmentationSpec { sigma_fraction: 0.1, seed: 1, ..Default::default() };
        let draws = 100_000;
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for n in 0..draws {
            let a = augment(&[0.0, 0.0], &[1.0, 1.0], &spec, 0, n);
            for d in 0..2 {
                sums[d] += a[d];
                sq[d] += a[d] * a[d];
            }
        }
        for d in 0..2 {
            let mean = sums[d] / draws as f64;
            let std = (sq[d] / draws as f64 - mean * mean).sqrt();
            assert!((std - 0.1).abs() < 0.01, "dim {d}: {std}");
        }
    }

    #[test]
    fn empty_corrupted_set_is_plain_ce() {
        let data = apply_symmetric_noise(&make_blobs(100, 3, 2, 3.0, 0).unwrap(), 0.3, false, 1).unwrap();
        let arch = Architecture::Mlp { hidden: 4 };
        let opt = OptimizerConfig { batch_size: 16, ..Default::default() };
        let mut a = Classifier::new(arch, 2, 3, 5).unwrap();
        let mut b = a.clone();
        let mut ta = Trainer::new(&a, opt.clone(), BatchNormalization::SelectedCount, 3);
        let mut tb = ta.clone();
        let (_, std) = data.feature_moments();
        let cfg = ConsistencyConfig::default();
        let split = vec![true; 100];
        let stats = consistency_epoch_with(&mut a, &mut ta, &data, &data, &split, &std, &cfg, 0).unwrap();
        assert_eq!(stats.kl_loss, 0.0);
        assert!(stats.batch_kl.is_empty());
        let prior = crate::loss::NoisyPrior::from_labels(data.noisy_labels(), 3).unwrap();
        tb.regularized_epoch(&mut b, &data, &split, &prior, 0.0, 0).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn loss_decomposes_and_kl_is_nonnegative() {
        let data = apply_symmetric_noise(&make_blobs(120, 3, 2, 3.0, 0).unwrap(), 0.4, false, 1).unwrap();
        let mut model = Classifier::new(Architecture::Linear, 2, 3, 5).unwrap();
        model.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = (i as f64 * 0.37).sin());
        let mut trainer = Trainer::new(&model, OptimizerConfig::default(), BatchNormalization::SelectedCount, 3);
        let split: Vec<bool> = (0..120).map(|n| data.is_clean(n)).collect();
        let (_, std) = data.feature_moments();
        let cfg = ConsistencyConfig { kl_weight: 0.5, ..Default::default() };
        let s = consistency_epoch_with(&mut model, &mut trainer, &data, &data, &split, &std, &cfg, 0).unwrap();
        assert!((s.train_loss - (s.ce_loss + 0.5 * s.kl_loss)).abs() < 1e-12);
        assert!(s.batch_kl.iter().all(|&k| k >= 0.0));
        assert!(s.kl_loss > 0.0);
    }
}
