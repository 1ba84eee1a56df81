//! Centered regularized loss `ℓ + ℓ_CR − α` for clean and corrupted samples at
//! 40% symmetric noise, with and without the regularizer. Writes the CR
//! histogram to `loss_hist.csv` when a path is given.

use std::fs::File;

use cores_sieve::datagen::{make_blobs, NoiseKind, NoiseSpec};
use cores_sieve::metrics::{median, write_loss_histogram};
use cores_sieve::model::Architecture;
use cores_sieve::sieve::{run_cores, CoresConfig};

fn main() -> cores_sieve::Result<()> {
    let clean = make_blobs(5000, 4, 30, 3.5, 0)?;
    let spec = NoiseSpec { kind: NoiseKind::Symmetric, epsilon: 0.4, include_true_label: false, instance_params: None };
    let (train, _) = spec.apply(&clean, 100)?;
    let mut cfg = CoresConfig::desk_scale(4, Architecture::Mlp { hidden: 64 });
    cfg.train_seed = 200;
    cfg.histogram_epochs = vec![cfg.optimizer.epochs - 1];

    for (name, c) in [("CR", cfg.clone()), ("CE", cfg.ce_baseline())] {
        let run = run_cores(&train, None, &c)?;
        let hist = &run.histograms[0].1;
        let pick =
            |clean: bool| hist.iter().filter(|r| r.is_clean == clean).map(|r| r.centered_loss).collect::<Vec<_>>();
        let (good, bad) = (pick(true), pick(false));
        let below = good.iter().filter(|&&v| v < 0.0).count() as f64 / good.len() as f64;
        println!(
            "{name}: clean median {:+.4}, corrupted median {:+.4}, clean below zero {:.3}",
            median(&good).unwrap_or(f64::NAN),
            median(&bad).unwrap_or(f64::NAN),
            below
        );
        if name == "CR" {
            if let Some(path) = std::env::args().nth(1) {
                write_loss_histogram(hist, File::create(path)?)?;
            }
        }
    }
    Ok(())
}
