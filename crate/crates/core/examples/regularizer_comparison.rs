//! Slopes of the binary confidence regularizer and the entropy regularizer,
//! then a CE-sieve against CR-sieve run on the same noisy data.

use cores_sieve::datagen::{make_blobs, NoiseKind, NoiseSpec};
use cores_sieve::loss::{cr_term_grad, entropy_reg_grad, NoisyPrior};
use cores_sieve::model::Architecture;
use cores_sieve::sieve::{run_cores, CoresConfig};

fn main() -> cores_sieve::Result<()> {
    let prior = NoisyPrior::uniform(2);
    println!("    p   d/dp CR   d/dp ER");
    for p in [0.05, 0.1, 0.2, 0.3, 0.4, 0.45] {
        let probs = [p, 1.0 - p];
        let g = cr_term_grad(&probs, &prior, 2.0);
        let e = entropy_reg_grad(&probs);
        println!("{p:>5.2} {:>9.4} {:>9.4}", g[0] - g[1], e[0] - e[1]);
    }

    let clean = make_blobs(5000, 4, 30, 3.5, 0)?;
    let spec = NoiseSpec { kind: NoiseKind::Instance, epsilon: 0.4, include_true_label: false, instance_params: None };
    let (train, _) = spec.apply(&clean, 100)?;
    let mut cfg = CoresConfig::desk_scale(4, Architecture::Mlp { hidden: 64 });
    cfg.train_seed = 200;
    for (name, c) in [("CR", cfg.clone()), ("CE", cfg.ce_baseline())] {
        let run = run_cores(&train, None, &c)?;
        let m = run.final_report().expect("at least one epoch");
        println!("{name} sieve: precision {:.4} recall {:.4} F {:.4}", m.precision, m.recall, m.f_score);
    }
    Ok(())
}
