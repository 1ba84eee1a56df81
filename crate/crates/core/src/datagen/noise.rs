//! Label-noise processes.
//!
//! Draw order, for reproducibility:
//! * symmetric: per sample, one uniform `u`; if `u < ε` one integer draw picks
//!   the replacement class.
//! * asymmetric: per sample, one uniform.
//! * instance: all `N` flip rates first (rejection sampling), then the `S×K`
//!   entries of `W` row-major, then one uniform per sample for the
//!   categorical draw.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Standard deviation of the per-sample flip-rate distribution.
pub const FLIP_RATE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    Instance,
}

/// Realized parameters of the instance-dependent generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    /// `S×K` projection matrix.
    pub w: Vec<Vec<f64>>,
    /// Per-sample flip rates `q_n`.
    pub flip_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub epsilon: f64,
    #[serde(default)]
    pub include_true_label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_params: Option<InstanceParams>,
}

impl NoiseSpec {
    pub fn symmetric(epsilon: f64, include_true_label: bool) -> Self {
        Self { kind: NoiseKind::Symmetric, epsilon, include_true_label, instance_params: None }
    }

    pub fn asymmetric(epsilon: f64) -> Self {
        Self { kind: NoiseKind::Asymmetric, epsilon, include_true_label: false, instance_params: None }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.kind == NoiseKind::Instance {
            let params = self
                .instance_params
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("instance noise requires W and flip rates".into()))?;
            if let Some(q) = params.flip_rates.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                return Err(Error::InvalidArgument(format!("flip rate {q} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies this noise process to `data`. Instance noise draws fresh
    /// parameters; use [`apply_instance_noise_with`] to reuse realized ones.
    pub fn apply(&self, data: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, NoiseSpec)> {
        match self.kind {
            NoiseKind::Symmetric => {
                Ok((apply_symmetric_noise(data, self.epsilon, self.include_true_label, seed)?, self.clone()))
            }
            NoiseKind::Asymmetric => Ok((apply_asymmetric_noise(data, self.epsilon, seed)?, self.clone())),
            NoiseKind::Instance => apply_instance_noise(data, self.epsilon, seed),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon must lie in [0, 1), got {epsilon}")))
    }
}

/// Flips each label w.p. `epsilon`: to a uniformly random *other* class, or,
/// with `include_true_label`, to a uniform class over all `K`.
pub fn apply_symmetric_noise(
    data: &LabeledDataset,
    epsilon: f64,
    include_true_label: bool,
    seed: u64,
) -> Result<LabeledDataset> {
    check_epsilon(epsilon)?;
    let k = data.num_classes();
    let mut rng = rng::seeded(seed);
    let noisy = data
        .clean_labels()
        .iter()
        .map(|&y| {
            let u: f64 = rng.random();
            if u >= epsilon {
                y
            } else if include_true_label {
                rng.random_range(0..k)
            } else {
                let r = rng.random_range(0..k - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            }
        })
        .collect();
    data.relabeled(noisy)
}

/// Moves label `i` to `(i + 1) mod K` w.p. `epsilon`.
pub fn apply_asymmetric_noise(data: &LabeledDataset, epsilon: f64, seed: u64) -> Result<LabeledDataset> {
    check_epsilon(epsilon)?;
    let k = data.num_classes();
    let mut rng = rng::seeded(seed);
    let noisy = data
        .clean_labels()
        .iter()
        .map(|&y| {
            let u: f64 = rng.random();
            if u < epsilon {
                (y + 1) % k
            } else {
                y
            }
        })
        .collect();
    data.relabeled(noisy)
}

/// Draws from `Normal(mean, std²)` conditioned on `[0, 1]` by rejection.
pub fn truncated_normal(mean: f64, std: f64, rng: &mut Rng) -> f64 {
    let normal = Normal::new(mean, std).expect("finite positive std");
    loop {
        let z: f64 = normal.sample(rng);
        if (0.0..=1.0).contains(&z) {
            return z;
        }
    }
}

/// Flip distribution for one sample under the instance-dependent generator.
///
/// `x` must already be standardized. The clean class is excluded from the
/// softmax, the remaining mass `q` is spread by `softmax(x·W)`, and the clean
/// class keeps `1 - q`.
pub fn instance_flip_distribution(x: &[f64], clean_label: usize, flip_rate: f64, w: &[Vec<f64>]) -> Vec<f64> {
    let k = w.first().map(Vec::len).unwrap_or(0);
    let mut logits = vec![0.0; k];
    for (xs, row) in x.iter().zip(w) {
        for (l, wj) in logits.iter_mut().zip(row) {
            *l += xs * wj;
        }
    }
    let max =
        logits.iter().enumerate().filter(|&(j, _)| j != clean_label).map(|(_, &l)| l).fold(f64::NEG_INFINITY, f64::max);
    let mut p = vec![0.0; k];
    let mut total = 0.0;
    for j in (0..k).filter(|&j| j != clean_label) {
        p[j] = (logits[j] - max).exp();
        total += p[j];
    }
    for j in (0..k).filter(|&j| j != clean_label) {
        p[j] = flip_rate * p[j] / total;
    }
    p[clean_label] = 1.0 - flip_rate;
    p
}

fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj <= 0.0 {
            continue;
        }
        acc += pj;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

/// Instance-dependent noise with freshly drawn flip rates and projection.
///
/// Features are z-scored per dimension before the `x·W` projection.
pub fn apply_instance_noise(data: &LabeledDataset, epsilon: f64, seed: u64) -> Result<(LabeledDataset, NoiseSpec)> {
    check_epsilon(epsilon)?;
    let mut rng = rng::seeded(seed);
    let flip_rates: Vec<f64> = (0..data.len()).map(|_| truncated_normal(epsilon, FLIP_RATE_STD, &mut rng)).collect();
    let w: Vec<Vec<f64>> =
        (0..data.dim()).map(|_| (0..data.num_classes()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let params = InstanceParams { w, flip_rates };
    let noisy = sample_instance_labels(data, &params, &mut rng)?;
    let spec =
        NoiseSpec { kind: NoiseKind::Instance, epsilon, include_true_label: false, instance_params: Some(params) };
    Ok((noisy, spec))
}

/// Instance-dependent noise with given `W` and flip rates; `seed` drives only
/// the categorical draws.
pub fn apply_instance_noise_with(data: &LabeledDataset, params: &InstanceParams, seed: u64) -> Result<LabeledDataset> {
    sample_instance_labels(data, params, &mut rng::seeded(seed))
}

fn sample_instance_labels(data: &LabeledDataset, params: &InstanceParams, rng: &mut Rng) -> Result<LabeledDataset> {
    if params.flip_rates.len() != data.len() {
        return Err(Error::LengthMismatch(format!(
            "{} flip rates for {} samples",
            params.flip_rates.len(),
            data.len()
        )));
    }
    if params.w.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: params.w.len() });
    }
    if let Some(row) = params.w.iter().find(|r| r.len() != data.num_classes()) {
        return Err(Error::DimensionMismatch { expected: data.num_classes(), got: row.len() });
    }
    if let Some(q) = params.flip_rates.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::InvalidArgument(format!("flip rate {q} outside [0, 1]")));
    }
    let z = data.standardized_features();
    let noisy = (0..data.len())
        .map(|n| {
            let x = &z[n * data.dim()..(n + 1) * data.dim()];
            let p = instance_flip_distribution(x, data.clean_labels()[n], params.flip_rates[n], &params.w);
            sample_categorical(&p, rng)
        })
        .collect();
    data.relabeled(noisy)
}

/// Row `i`, column `j`: fraction of clean-class-`i` samples labeled `j`.
pub fn empirical_transition(data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    let k = data.num_classes();
    let mut counts = vec![vec![0usize; k]; k];
    for (&y, &yt) in data.clean_labels().iter().zip(data.noisy_labels()) {
        counts[y][yt] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                return Err(Error::DegenerateClass(i));
            }
            Ok(row.into_iter().map(|c| c as f64 / total as f64).collect())
        })
        .collect()
}
