//! Exact decoupling of the regularized risk on a two-atom world, plus the
//! admissible β range and the confident minimizer at a few β values.

use cores_sieve::datagen::DiscreteWorld;
use cores_sieve::theory::{beta_interval, brute_force_confident_minimizer, decouple, noisy_posterior};

fn main() -> cores_sieve::Result<()> {
    let world = DiscreteWorld::new(
        Vec::new(),
        vec![0.5, 0.5],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![vec![0.9, 0.1], vec![0.4, 0.6]]],
    )?;
    let f = noisy_posterior(&world);
    for beta in [0.0, 0.5, 1.0, 2.0] {
        let d = decouple(&world, &f, beta)?;
        println!(
            "beta {beta:.1}: lhs {:.6} = {:.6} + {:.6} + {:.6} (residual {:.1e})",
            d.lhs,
            d.term1,
            d.term2,
            d.term3,
            d.residual()
        );
    }
    let iv = beta_interval(&world)?;
    println!("interval [{}, {}], per-atom upper {}, feasible {}", iv.lower, iv.upper, iv.per_atom_upper, iv.feasible);
    for beta in [0.1, 0.5, 1.0, 3.0] {
        let m = brute_force_confident_minimizer(&world, beta)?;
        println!("beta {beta:.1}: confident minimizer {:?} (margin {:.4})", m.labels, m.margin);
    }
    Ok(())
}
