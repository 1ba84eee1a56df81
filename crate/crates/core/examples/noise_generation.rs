//! Corrupt a clean blob dataset with each noise kind and print the realized
//! corruption rate and empirical transition matrix.

use cores_sieve::datagen::{empirical_transition, make_blobs, NoiseKind, NoiseSpec};

fn main() -> cores_sieve::Result<()> {
    let clean = make_blobs(20_000, 4, 10, 3.0, 0)?;
    for kind in [NoiseKind::Symmetric, NoiseKind::Asymmetric, NoiseKind::Instance] {
        let spec = NoiseSpec { kind, epsilon: 0.4, include_true_label: false, instance_params: None };
        let (noisy, _) = spec.apply(&clean, 1)?;
        println!("{kind:?}: corruption rate {:.4}", noisy.corruption_rate());
        for row in empirical_transition(&noisy)? {
            println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}
