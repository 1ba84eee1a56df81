//! A full CORES² run on instance-noisy blobs, printing sieve quality per epoch.

use cores_sieve::datagen::{make_blobs, NoiseKind, NoiseSpec};
use cores_sieve::model::Architecture;
use cores_sieve::sieve::{run_cores, CoresConfig};

fn main() -> cores_sieve::Result<()> {
    let clean = make_blobs(5000, 4, 30, 3.5, 0)?;
    let spec = NoiseSpec { kind: NoiseKind::Instance, epsilon: 0.4, include_true_label: false, instance_params: None };
    let (train, _) = spec.apply(&clean, 100)?;
    let test = make_blobs(2000, 4, 30, 3.5, 1000)?;

    let mut cfg = CoresConfig::desk_scale(4, Architecture::Mlp { hidden: 64 });
    cfg.train_seed = 200;
    let run = run_cores(&train, Some(&test), &cfg)?;
    println!("epoch   beta  selected  precision  recall  f_score  test_acc");
    for m in &run.metrics {
        println!(
            "{:>5} {:>6.3} {:>9} {:>10.4} {:>7.4} {:>8.4} {:>9.4}",
            m.epoch,
            m.beta,
            m.num_selected,
            m.precision,
            m.recall,
            m.f_score,
            m.test_acc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
