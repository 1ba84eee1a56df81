//! Synthetic datasets and label-noise processes.

mod io;
mod noise;
mod world;

pub use io::{read_dataset_csv, read_noise_json, write_dataset_csv, write_noise_json, NoiseSidecar};
pub use noise::{
    apply_asymmetric_noise, apply_instance_noise, apply_instance_noise_with, apply_symmetric_noise,
    empirical_transition, instance_flip_distribution, truncated_normal, InstanceParams, NoiseKind, NoiseSpec,
    FLIP_RATE_STD,
};
pub use world::DiscreteWorld;

use rand_distr::{Distribution, StandardNormal};

use crate::rng;
use crate::{Error, Result};

/// Features with clean and noisy labels.
///
/// Features are stored row-major; `row(n)` borrows sample `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    clean_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    num_classes: usize,
    seed: u64,
}

impl LabeledDataset {
    /// Builds a dataset whose noisy labels equal the clean labels.
    pub fn new(features: Vec<Vec<f64>>, clean_labels: Vec<usize>, num_classes: usize, seed: u64) -> Result<Self> {
        let noisy = clean_labels.clone();
        Self::with_labels(features, clean_labels, noisy, num_classes, seed)
    }

    pub fn with_labels(
        features: Vec<Vec<f64>>,
        clean_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let dim = features.first().map(Vec::len).unwrap_or(0);
        let flat: Vec<f64> = features.iter().flatten().copied().collect();
        if let Some(bad) = features.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::from_flat(flat, dim, clean_labels, noisy_labels, num_classes, seed)
    }

    pub fn from_flat(
        features: Vec<f64>,
        dim: usize,
        clean_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = clean_labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!("num_classes must be at least 2, got {num_classes}")));
        }
        if features.len() != n * dim {
            return Err(Error::LengthMismatch(format!(
                "{} feature values for {n} samples of dimension {dim}",
                features.len()
            )));
        }
        if noisy_labels.len() != n {
            return Err(Error::LengthMismatch(format!("{} clean labels but {} noisy labels", n, noisy_labels.len())));
        }
        if let Some(&bad) = clean_labels.iter().chain(&noisy_labels).find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features contain non-finite values".into()));
        }
        Ok(Self { features, dim, clean_labels, noisy_labels, num_classes, seed })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn is_clean(&self, n: usize) -> bool {
        self.clean_labels[n] == self.noisy_labels[n]
    }

    /// Fraction of samples whose noisy label differs from the clean one.
    pub fn corruption_rate(&self) -> f64 {
        let flipped = (0..self.len()).filter(|&n| !self.is_clean(n)).count();
        flipped as f64 / self.len() as f64
    }

    /// Replaces the noisy labels, keeping everything else.
    pub fn relabeled(&self, noisy_labels: Vec<usize>) -> Result<Self> {
        Self::from_flat(
            self.features.clone(),
            self.dim,
            self.clean_labels.clone(),
            noisy_labels,
            self.num_classes,
            self.seed,
        )
    }

    /// Per-dimension mean and (population) standard deviation.
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for row in self.rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        (mean, std)
    }

    /// Z-scored copy of the feature matrix (row-major). Constant dimensions are
    /// only centered.
    pub fn standardized_features(&self) -> Vec<f64> {
        let (mean, std) = self.feature_moments();
        let mut out = Vec::with_capacity(self.features.len());
        for row in self.rows() {
            for ((x, m), s) in row.iter().zip(&mean).zip(&std) {
                let scale = if *s > 0.0 { *s } else { 1.0 };
                out.push((x - m) / scale);
            }
        }
        out
    }
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// For `dim >= 2` the class means sit on a regular polygon in the first two
/// coordinates with adjacent means exactly `separation` apart; for `dim == 1`
/// they lie on a line with spacing `separation`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSource {
    means: Vec<Vec<f64>>,
    dim: usize,
}

impl BlobSource {
    pub fn new(num_classes: usize, dim: usize, separation: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!("num_classes must be at least 2, got {num_classes}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(Error::InvalidArgument(format!("separation must be positive, got {separation}")));
        }
        let k = num_classes as f64;
        let means = (0..num_classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                if dim >= 2 {
                    let radius = separation / (2.0 * (std::f64::consts::PI / k).sin());
                    let angle = 2.0 * std::f64::consts::PI * c as f64 / k;
                    m[0] = radius * angle.cos();
                    m[1] = radius * angle.sin();
                } else {
                    m[0] = separation * (c as f64 - (k - 1.0) / 2.0);
                }
                m
            })
            .collect();
        Ok(Self { means, dim })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    /// Draws `num_samples` points with labels cycling `0, 1, .., K-1`, so each
    /// class receives `N / K` samples (the first `N mod K` classes one more).
    pub fn sample(&self, num_samples: usize, seed: u64) -> Result<LabeledDataset> {
        let k = self.num_classes();
        if num_samples < k {
            return Err(Error::InvalidArgument(format!(
                "num_samples ({num_samples}) must be at least num_classes ({k})"
            )));
        }
        let mut rng = rng::seeded(seed);
        let mut features = Vec::with_capacity(num_samples * self.dim);
        let mut labels = Vec::with_capacity(num_samples);
        for n in 0..num_samples {
            let y = n % k;
            for d in 0..self.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(self.means[y][d] + z);
            }
            labels.push(y);
        }
        LabeledDataset::from_flat(features, self.dim, labels.clone(), labels, k, seed)
    }
}

/// Class-balanced Gaussian blobs with `noisy_labels == clean_labels`.
pub fn make_blobs(
    num_samples: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    BlobSource::new(num_classes, dim, separation)?.sample(num_samples, seed)
}
