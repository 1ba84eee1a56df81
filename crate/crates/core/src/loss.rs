//! Per-sample losses and their gradients with respect to the predicted
//! probability vector.
//!
//! Every logarithm of a probability is taken at `max(p, P_FLOOR)`; below the
//! floor the corresponding gradient entry is zero.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, P_FLOOR};

fn floored_ln(p: f64) -> f64 {
    p.max(P_FLOOR).ln()
}

/// `d/dp ln(max(p, floor))`.
fn floored_ln_slope(p: f64) -> f64 {
    if p > P_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Noisy-label prior `P(Ỹ = j)`, counted once from the full noisy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyPrior {
    probs: Vec<f64>,
}

impl NoisyPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument("prior needs at least two classes".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument("prior entries must be non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("prior sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self { probs: vec![1.0 / num_classes as f64; num_classes] }
    }

    /// Label frequencies.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut counts = vec![0usize; num_classes];
        for &y in labels {
            *counts
                .get_mut(y)
                .ok_or_else(|| Error::InvalidArgument(format!("label {y} outside [0, {num_classes})")))? += 1;
        }
        let n = labels.len() as f64;
        Ok(Self { probs: counts.into_iter().map(|c| c as f64 / n).collect() })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// `-ln f[label]`.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -floored_ln(probs[label])
}

pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    g[label] = -floored_ln_slope(probs[label]);
    g
}

/// Confidence regularizer `β Σ_j P(Ỹ=j) ln f[j]`, i.e. minus β times the
/// expected cross-entropy against the noisy prior.
pub fn cr_term(probs: &[f64], prior: &NoisyPrior, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    beta * probs.iter().zip(prior.probs()).map(|(&p, &w)| w * floored_ln(p)).sum::<f64>()
}

pub fn cr_term_grad(probs: &[f64], prior: &NoisyPrior, beta: f64) -> Vec<f64> {
    probs.iter().zip(prior.probs()).map(|(&p, &w)| beta * w * floored_ln_slope(p)).collect()
}

/// Mean cross-entropy over all `K` candidate labels.
///
/// Computed as `min + Σ (ce_y - min) / K` so that identical entries give back
/// that entry exactly.
fn mean_candidate_ce(probs: &[f64]) -> f64 {
    let ces: Vec<f64> = (0..probs.len()).map(|y| cross_entropy(probs, y)).collect();
    let lo = ces.iter().copied().fold(f64::INFINITY, f64::min);
    lo + ces.iter().map(|c| c - lo).sum::<f64>() / probs.len() as f64
}

/// Sieve threshold `α = (1/K) Σ_y ℓ(f, y) + ℓ_CR(f)`.
pub fn sieve_threshold(probs: &[f64], prior: &NoisyPrior, beta: f64) -> f64 {
    mean_candidate_ce(probs) + cr_term(probs, prior, beta)
}

/// Regularized loss minus the threshold; negative means the sample is kept.
pub fn centered_loss(probs: &[f64], noisy_label: usize, prior: &NoisyPrior, beta: f64) -> f64 {
    let cr = cr_term(probs, prior, beta);
    (cross_entropy(probs, noisy_label) + cr) - (mean_candidate_ce(probs) + cr)
}

/// The decision with the regularizer cancelled: `-ln f[ỹ] < -(1/K) Σ_y ln f[y]`.
pub fn sieve_decision_simplified(probs: &[f64], noisy_label: usize) -> bool {
    cross_entropy(probs, noisy_label) < mean_candidate_ce(probs)
}

/// `v = 1` iff `ℓ(f, ỹ) + ℓ_CR(f) < α`. Ties are sieved out.
pub fn sieve_decision(probs: &[f64], noisy_label: usize, prior: &NoisyPrior, beta: f64) -> bool {
    let cr = cr_term(probs, prior, beta);
    let loss = cross_entropy(probs, noisy_label);
    let mean = mean_candidate_ce(probs);
    let full = loss + cr < mean + cr;
    let simplified = loss < mean;
    // The two forms can only differ when adding `cr` rounds a near-tie away.
    assert!(
        full == simplified || (loss - mean).abs() <= 1e-12 * (1.0 + cr.abs()),
        "sieve decision forms disagree: loss={loss}, mean={mean}, cr={cr}"
    );
    full
}

/// Peer term `ℓ(f(x_{n1}), ỹ_{n2})`: cross-entropy of one sample's prediction
/// against a randomly paired sample's label. The caller subtracts it from the
/// sample's own cross-entropy.
pub fn peer_loss(probs_n1: &[f64], label_n2: usize) -> f64 {
    cross_entropy(probs_n1, label_n2)
}

pub fn peer_loss_grad(probs_n1: &[f64], label_n2: usize) -> Vec<f64> {
    cross_entropy_grad(probs_n1, label_n2)
}

/// Entropy `-Σ p ln p`.
pub fn entropy_reg(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| p * floored_ln(p)).sum::<f64>()
}

pub fn entropy_reg_grad(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| -(floored_ln(p) + p * floored_ln_slope(p))).collect()
}

/// `KL(q ‖ p)` with `q` the gradient-stopped prediction on the augmented
/// feature and `p` the live prediction on the original feature. Terms with
/// `q_j = 0` contribute zero.
pub fn kl_consistency(probs_orig: &[f64], probs_aug_detached: &[f64]) -> f64 {
    probs_orig
        .iter()
        .zip(probs_aug_detached)
        .filter(|(_, &q)| q > 0.0)
        .map(|(&p, &q)| q * (floored_ln(q) - floored_ln(p)))
        .sum()
}

/// Gradient of [`kl_consistency`] with respect to `probs_orig` only.
pub fn kl_consistency_grad(probs_orig: &[f64], probs_aug_detached: &[f64]) -> Vec<f64> {
    probs_orig.iter().zip(probs_aug_detached).map(|(&p, &q)| -q * floored_ln_slope(p)).collect()
}

/// β schedule: zero during warm-up, linear ramp, then flat at `beta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub warmup_epochs: usize,
    pub ramp_epochs: usize,
    pub beta_max: f64,
}

impl BetaSchedule {
    /// 10 warm-up epochs, then 0 → 2 over 30 epochs.
    pub fn full_scale() -> Self {
        Self { warmup_epochs: 10, ramp_epochs: 30, beta_max: 2.0 }
    }

    /// The full-scale schedule shrunk to a 50-epoch budget: 5 warm-up, 15 ramp.
    pub fn desk_scale(num_classes: usize) -> Self {
        Self { warmup_epochs: 5, ramp_epochs: 15, beta_max: default_beta_max(num_classes) }
    }

    pub fn beta_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        if self.ramp_epochs == 0 {
            return self.beta_max;
        }
        let progress = (epoch - self.warmup_epochs) as f64 / self.ramp_epochs as f64;
        self.beta_max * progress.min(1.0)
    }

    /// First epoch at which `beta_at` reaches `beta_max`.
    pub fn ramp_end(&self) -> usize {
        self.warmup_epochs + self.ramp_epochs
    }
}

/// 2 up to ten classes, then growing linearly as `0.2·K`.
pub fn default_beta_max(num_classes: usize) -> f64 {
    if num_classes <= 10 {
        2.0
    } else {
        0.2 * num_classes as f64
    }
}
