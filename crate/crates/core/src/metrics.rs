//! Sieve quality and model quality.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::loss::{centered_loss, NoisyPrior};
use crate::model::{argmax, Classifier};
use crate::{Error, Result};

/// Selection quality against ground-truth cleanliness (`y == ỹ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub num_selected: usize,
    pub num_clean: usize,
    /// Selected samples that are clean.
    pub num_selected_clean: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F-score of `v`. Zero denominators yield 0.
pub fn sieve_report(v: &[bool], clean_labels: &[usize], noisy_labels: &[usize]) -> Result<SieveReport> {
    if v.len() != clean_labels.len() || v.len() != noisy_labels.len() {
        return Err(Error::LengthMismatch(format!(
            "v has {} entries, clean labels {}, noisy labels {}",
            v.len(),
            clean_labels.len(),
            noisy_labels.len()
        )));
    }
    let mut num_selected = 0;
    let mut num_clean = 0;
    let mut num_selected_clean = 0;
    for ((&keep, &y), &yt) in v.iter().zip(clean_labels).zip(noisy_labels) {
        let clean = y == yt;
        num_selected += usize::from(keep);
        num_clean += usize::from(clean);
        num_selected_clean += usize::from(keep && clean);
    }
    let precision = ratio(num_selected_clean, num_selected);
    let recall = ratio(num_selected_clean, num_clean);
    let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(SieveReport { precision, recall, f_score, num_selected, num_clean, num_selected_clean })
}

/// Fraction of argmax predictions equal to the clean label. Ties in the
/// argmax go to the smallest class index.
pub fn test_accuracy(model: &Classifier, test_data: &LabeledDataset) -> Result<f64> {
    if test_data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &y) in test_data.rows().zip(test_data.clean_labels()) {
        correct += usize::from(argmax(&model.forward(x)?) == y);
    }
    Ok(correct as f64 / test_data.len() as f64)
}

/// One row of the centered-loss export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub index: usize,
    /// `ℓ(f, ỹ) + ℓ_CR(f) − α`; negative iff the sieve keeps the sample.
    pub centered_loss: f64,
    pub is_clean: bool,
}

pub fn loss_histogram(
    model: &Classifier,
    data: &LabeledDataset,
    prior: &NoisyPrior,
    beta: f64,
) -> Result<Vec<LossRecord>> {
    (0..data.len())
        .map(|n| {
            let probs = model.forward(data.row(n))?;
            Ok(LossRecord {
                index: n,
                centered_loss: centered_loss(&probs, data.noisy_labels()[n], prior, beta),
                is_clean: data.is_clean(n),
            })
        })
        .collect()
}

/// Writes `index,centered_loss,is_clean` rows.
pub fn write_loss_histogram<W: Write>(records: &[LossRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["index", "centered_loss", "is_clean"])?;
    for r in records {
        out.write_record([r.index.to_string(), r.centered_loss.to_string(), u8::from(r.is_clean).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_blobs;
    use crate::loss::sieve_decision;
    use crate::model::Architecture;
    use proptest::prelude::*;

    #[test]
    fn perfect_division() {
        let clean = [0, 1, 2, 0, 1];
        let noisy = [0, 2, 2, 1, 1];
        let v: Vec<bool> = clean.iter().zip(&noisy).map(|(a, b)| a == b).collect();
        let r = sieve_report(&v, &clean, &noisy).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score), (1.0, 1.0, 1.0));
    }

    #[test]
    fn select_everything_at_forty_percent_noise() {
        let clean: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let mut noisy = clean.clone();
        for y in noisy.iter_mut().take(4) {
            *y = 1 - *y;
        }
        let r = sieve_report(&[true; 10], &clean, &noisy).unwrap();
        assert!((r.precision - 0.6).abs() < 1e-12);
        assert_eq!(r.recall, 1.0);
        assert!((r.f_score - 0.75).abs() < 1e-12);
    }

    #[test]
    fn select_nothing() {
        let r = sieve_report(&[false; 3], &[0, 1, 0], &[0, 1, 1]).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score, r.num_selected), (0.0, 0.0, 0.0, 0));
        assert!(sieve_report(&[true], &[0, 1], &[0, 1]).is_err());
    }

    #[test]
    fn uniform_model_accuracy_is_first_class_share() {
        let data = make_blobs(400, 4, 2, 3.0, 0).unwrap();
        let model = Classifier::new(Architecture::Linear, 2, 4, 0).unwrap();
        assert_eq!(test_accuracy(&model, &data).unwrap(), 0.25);
    }

    #[test]
    fn oracle_model_accuracy_is_one() {
        // Linear model whose logits are -|x - mean|² up to a shared term.
        let data = make_blobs(300, 3, 2, 8.0, 1).unwrap();
        let src = crate::datagen::BlobSource::new(3, 2, 8.0).unwrap();
        let mut params = Vec::new();
        for m in src.means() {
            params.extend(m.iter().map(|v| 2.0 * v));
        }
        for m in src.means() {
            params.push(-m.iter().map(|v| v * v).sum::<f64>());
        }
        let model = Classifier::from_params(Architecture::Linear, 2, 3, params).unwrap();
        let acc = test_accuracy(&model, &data).unwrap();
        assert!(acc > 0.99, "{acc}");
    }

    #[test]
    fn histogram_agrees_with_decisions() {
        let data = make_blobs(200, 3, 2, 2.0, 4).unwrap();
        let noisy = crate::datagen::apply_symmetric_noise(&data, 0.3, false, 2).unwrap();
        let mut model = Classifier::new(Architecture::Mlp { hidden: 4 }, 2, 3, 1).unwrap();
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            *p += ((i * 37 % 11) as f64 - 5.0) / 7.0;
        }
        let prior = NoisyPrior::from_labels(noisy.noisy_labels(), 3).unwrap();
        let records = loss_histogram(&model, &noisy, &prior, 1.3).unwrap();
        for r in &records {
            let probs = model.forward(noisy.row(r.index)).unwrap();
            let keep = sieve_decision(&probs, noisy.noisy_labels()[r.index], &prior, 1.3);
            assert_eq!(r.centered_loss < 0.0, keep);
        }
        let uniform = Classifier::new(Architecture::Linear, 2, 3, 0).unwrap();
        for r in loss_histogram(&uniform, &noisy, &prior, 1.3).unwrap() {
            assert_eq!(r.centered_loss, 0.0);
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn report_is_invariant_under_relabeling(
            pairs in prop::collection::vec((0usize..4, 0usize..4, any::<bool>()), 1..60),
            shift in 1usize..4,
        ) {
            let clean: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let noisy: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let v: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            let a = sieve_report(&v, &clean, &noisy).unwrap();
            let perm = |y: &usize| (y + shift) % 4;
            let b = sieve_report(&v, &clean.iter().map(perm).collect::<Vec<_>>(), &noisy.iter().map(perm).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a.f_score));
            if a.precision + a.recall > 0.0 {
                prop_assert!((a.f_score - 2.0 * a.precision * a.recall / (a.precision + a.recall)).abs() < 1e-15);
            }
        }
    }
}
