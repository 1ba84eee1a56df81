mod common;

use std::cell::RefCell;

use cores_sieve::consistency::{
    consistency_epoch_with, run_consistency_phase, run_cores_star, AugmentationSpec, ConsistencyConfig, NoisyLabels,
};
use cores_sieve::datagen::{apply_symmetric_noise, make_blobs, LabeledDataset, NoiseKind, NoiseSpec};
use cores_sieve::loss::NoisyPrior;
use cores_sieve::metrics::{loss_histogram, median, test_accuracy};
use cores_sieve::model::{Architecture, Classifier, OptimizerConfig};
use cores_sieve::sieve::{run_cores, run_sieve_phase, BatchNormalization, CoresConfig, Trainer};

fn small(k: usize, arch: Architecture, seed: u64) -> CoresConfig {
    let mut cfg = CoresConfig::desk_scale(k, arch);
    cfg.optimizer.epochs = 30;
    cfg.schedule.warmup_epochs = 3;
    cfg.schedule.ramp_epochs = 7;
    cfg.sieve_start = Some(cfg.schedule.ramp_end());
    cfg.train_seed = seed;
    cfg
}

fn noisy(kind: NoiseKind, eps: f64, n: usize, seed: u64) -> LabeledDataset {
    let clean = make_blobs(n, 4, 10, 3.0, seed).unwrap();
    NoiseSpec { kind, epsilon: eps, include_true_label: false, instance_params: None }
        .apply(&clean, seed + 1)
        .unwrap()
        .0
}

/// Independent check: any sample whose predicted probability on its noisy
/// label beats chance must have been kept.
fn above_chance_dropped(model: &Classifier, data: &LabeledDataset, v: &[bool]) -> usize {
    let k = data.num_classes() as f64;
    (0..data.len())
        .filter(|&n| {
            let logits = model.logits(data.row(n)).unwrap();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let p = (logits[data.noisy_labels()[n]] - m).exp() / z;
            p > 1.0 / k && !v[n]
        })
        .count()
}

#[test]
fn confident_samples_are_never_sieved_out() {
    for (s, kind) in [NoiseKind::Symmetric, NoiseKind::Asymmetric, NoiseKind::Instance].into_iter().enumerate() {
        for eps in [0.2, 0.6] {
            let data = noisy(kind, eps, 800, 10 + s as u64);
            let run = run_cores(&data, None, &small(4, Architecture::Mlp { hidden: 16 }, 3)).unwrap();
            assert!(run.metrics.iter().all(|m| m.retention_violations == 0), "{kind:?} {eps}");
            assert_eq!(above_chance_dropped(&run.model, &data, &run.state.v), 0, "{kind:?} {eps}");
        }
    }
}

#[test]
fn early_regularized_loss_does_not_climb() {
    let data = apply_symmetric_noise(&make_blobs(1000, 4, 10, 6.0, 1).unwrap(), 0.2, false, 2).unwrap();
    let mut cfg = small(4, Architecture::Linear, 4);
    cfg.optimizer.epochs = 5;
    let run = run_cores(&data, None, &cfg).unwrap();
    for w in run.metrics.windows(2) {
        assert!(w[1].train_loss <= 1.05 * w[0].train_loss, "{} -> {}", w[0].train_loss, w[1].train_loss);
    }
}

#[test]
fn clean_data_is_almost_entirely_kept() {
    let data = make_blobs(1000, 4, 10, 8.0, 5).unwrap();
    let run = run_cores(&data, None, &small(4, Architecture::Mlp { hidden: 16 }, 6)).unwrap();
    assert!(run.state.num_selected() as f64 >= 0.99 * data.len() as f64, "{}", run.state.num_selected());
}

#[test]
fn regularizer_pushes_corrupted_samples_above_the_threshold() {
    let noise =
        NoiseSpec { kind: NoiseKind::Symmetric, epsilon: 0.4, include_true_label: false, instance_params: None };
    let common::Setting { train: data, mut cores, .. } = common::setting(0, &noise, 5000);
    let last = cores.optimizer.epochs - 1;
    cores.histogram_epochs = vec![last];
    let cr = run_cores(&data, None, &cores).unwrap();
    let ce = run_cores(&data, None, &cores.ce_baseline()).unwrap();

    let hist = &cr.histograms[0].1;
    let clean: Vec<f64> = hist.iter().filter(|r| r.is_clean).map(|r| r.centered_loss).collect();
    let bad: Vec<f64> = hist.iter().filter(|r| !r.is_clean).map(|r| r.centered_loss).collect();
    assert!(median(&clean).unwrap() < 0.0 && median(&bad).unwrap() > 0.0);
    let clean_below = clean.iter().filter(|&&c| c < 0.0).count() as f64 / clean.len() as f64;
    assert!(clean_below > 0.9, "{clean_below}");
    for r in hist {
        assert_eq!(r.centered_loss < 0.0, cr.state.v[r.index], "sample {}", r.index);
    }

    let kept_bad = |v: &[bool]| (0..data.len()).filter(|&n| v[n] && !data.is_clean(n)).count();
    assert!(kept_bad(&cr.state.v) < kept_bad(&ce.state.v), "{} vs {}", kept_bad(&cr.state.v), kept_bad(&ce.state.v));

    let fresh = loss_histogram(&cr.model, &data, &cr.prior, cores.schedule.beta_at(last)).unwrap();
    assert_eq!(&fresh, hist);
}

struct Permuted(Vec<usize>);

impl NoisyLabels for Permuted {
    fn noisy_label(&self, n: usize) -> usize {
        self.0[n]
    }
}

struct Audit<'a> {
    data: &'a LabeledDataset,
    forbidden: &'a [bool],
    reads: RefCell<Vec<usize>>,
}

impl NoisyLabels for Audit<'_> {
    fn noisy_label(&self, n: usize) -> usize {
        if self.forbidden[n] {
            self.reads.borrow_mut().push(n);
        }
        self.data.noisy_labels()[n]
    }
}

fn short_star(seed: u64) -> (LabeledDataset, LabeledDataset, CoresConfig, ConsistencyConfig) {
    let data = noisy(NoiseKind::Instance, 0.4, 800, seed);
    let test = make_blobs(400, 4, 10, 3.0, seed + 50).unwrap();
    let cores = small(4, Architecture::Mlp { hidden: 16 }, seed);
    let star = ConsistencyConfig::for_budget(cores.schedule.ramp_end(), cores.optimizer.epochs);
    (data, test, cores, star)
}

#[test]
fn corrupted_labels_are_never_read_after_the_split() {
    let (data, test, cores, star) = short_star(20);
    let base = run_sieve_phase(&data, Some(&test), &cores, star.tau + 1).unwrap();
    let h: Vec<bool> = base.state.v.iter().map(|&v| !v).collect();
    assert!(h.iter().any(|&x| x));

    let audit = Audit { data: &data, forbidden: &h, reads: RefCell::new(Vec::new()) };
    let mut a = base.clone();
    run_consistency_phase(&mut a, &data, &audit, Some(&test), &star).unwrap();
    assert!(audit.reads.borrow().is_empty());

    let mut labels = data.noisy_labels().to_vec();
    for (n, l) in labels.iter_mut().enumerate() {
        if h[n] {
            *l = (*l + 1 + n % 3) % 4;
        }
    }
    let mut b = base.clone();
    run_consistency_phase(&mut b, &data, &Permuted(labels), Some(&test), &star).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.test_acc, y.test_acc);
    }
}

#[test]
fn snapshot_is_refreshed_every_epoch() {
    let data = noisy(NoiseKind::Symmetric, 0.4, 400, 30);
    let mut model = Classifier::new(Architecture::Mlp { hidden: 8 }, data.dim(), 4, 1).unwrap();
    let opt = OptimizerConfig { batch_size: 32, ..Default::default() };
    let mut trainer = Trainer::new(&model, opt, BatchNormalization::SelectedCount, 2);
    let split: Vec<bool> = (0..data.len()).map(|n| n % 3 != 0).collect();
    let (_, std) = data.feature_moments();
    let cfg = ConsistencyConfig {
        augmentation: AugmentationSpec { sigma_fraction: 0.0, ..Default::default() },
        ..Default::default()
    };
    for epoch in 0..4 {
        let first = trainer.epoch_order(data.len(), epoch)[..32].iter().any(|&n| !split[n]);
        let s = consistency_epoch_with(&mut model, &mut trainer, &data, &data, &split, &std, &cfg, epoch).unwrap();
        if first {
            assert_eq!(s.batch_kl[0], 0.0, "epoch {epoch}");
        }
        assert!(s.batch_kl.iter().skip(1).any(|&k| k > 0.0));
    }
}

#[test]
fn consistency_losses_add_up() {
    let (data, test, cores, mut star) = short_star(40);
    star.kl_weight = 0.7;
    let run = run_cores_star(&data, Some(&test), &cores, &star).unwrap();
    assert_eq!(run.metrics.len(), star.tau + 1 + star.epochs);
    for m in &run.metrics[star.tau + 1..] {
        let (ce, kl) = (m.ce_loss.unwrap(), m.kl_loss.unwrap());
        assert!((m.train_loss - (ce + kl)).abs() < 1e-12);
    }
    assert!(run.metrics[..=star.tau].iter().all(|m| m.kl_loss.is_none()));
}

#[test]
fn star_without_noise_matches_plain_training() {
    let data = noisy(NoiseKind::Symmetric, 0.0, 1500, 50);
    let test = make_blobs(1000, 4, 10, 3.0, 51).unwrap();
    let cores = small(4, Architecture::Mlp { hidden: 16 }, 52);
    let star = ConsistencyConfig::for_budget(cores.schedule.ramp_end(), cores.optimizer.epochs);
    let a = run_cores_star(&data, Some(&test), &cores, &star).unwrap();
    let mut plain = cores.ce_baseline();
    plain.sieve_start = None;
    plain.optimizer.epochs = star.tau + 1 + star.epochs;
    let b = run_cores(&data, Some(&test), &plain).unwrap();
    let (x, y) = (test_accuracy(&a.model, &test).unwrap(), test_accuracy(&b.model, &test).unwrap());
    assert!((x - y).abs() <= 0.01, "{x} vs {y}");
}

#[test]
fn batch_size_normalization_takes_smaller_steps() {
    let data = noisy(NoiseKind::Symmetric, 0.4, 500, 60);
    let model = Classifier::new(Architecture::Linear, data.dim(), 4, 3).unwrap();
    let prior = NoisyPrior::from_labels(data.noisy_labels(), 4).unwrap();
    let v: Vec<bool> = (0..data.len()).map(|n| n % 2 == 0).collect();
    let opt = OptimizerConfig { momentum: 0.0, weight_decay: 0.0, ..Default::default() };
    let moved = |norm| {
        let mut m = model.clone();
        Trainer::new(&m, opt.clone(), norm, 1).regularized_epoch(&mut m, &data, &v, &prior, 0.5, 0).unwrap();
        m.params().iter().zip(model.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let (sel, full) = (moved(BatchNormalization::SelectedCount), moved(BatchNormalization::BatchSize));
    assert!(full > 0.0 && full < sel, "{full} vs {sel}");
}
