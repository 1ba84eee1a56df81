//! CORES² against CORES²★ on the same data: the second run drops the labels of
//! sieved-out samples after the split and trains them with a KL consistency term.

use cores_sieve::consistency::{run_cores_star, ConsistencyConfig};
use cores_sieve::datagen::{make_blobs, NoiseKind, NoiseSpec};
use cores_sieve::model::Architecture;
use cores_sieve::sieve::{run_cores, CoresConfig};

fn main() -> cores_sieve::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let clean = make_blobs(5000, 4, 30, 3.5, seed)?;
    let spec = NoiseSpec { kind: NoiseKind::Instance, epsilon: 0.4, include_true_label: false, instance_params: None };
    let (train, _) = spec.apply(&clean, seed + 100)?;
    let test = make_blobs(2000, 4, 30, 3.5, seed + 1000)?;

    let mut cores = CoresConfig::desk_scale(4, Architecture::Mlp { hidden: 64 });
    cores.train_seed = seed + 200;
    let mut star = ConsistencyConfig::for_budget(cores.schedule.ramp_end(), cores.optimizer.epochs);
    star.augmentation.seed = seed + 300;

    let plain = run_cores(&train, Some(&test), &cores)?;
    let boosted = run_cores_star(&train, Some(&test), &cores, &star)?;
    let acc = |r: &cores_sieve::sieve::CoresRun| r.final_report().and_then(|m| m.test_acc).unwrap_or(f64::NAN);
    println!("split at epoch {}, {} consistency epochs", star.tau, star.epochs);
    println!("CORES2  test accuracy {:.4}", acc(&plain));
    println!("CORES2* test accuracy {:.4}", acc(&boosted));
    for m in boosted.metrics.iter().skip(star.tau + 1) {
        println!("  epoch {:>2}: ce {:.4} kl {:.4}", m.epoch, m.ce_loss.unwrap_or(0.0), m.kl_loss.unwrap_or(0.0));
    }
    Ok(())
}
