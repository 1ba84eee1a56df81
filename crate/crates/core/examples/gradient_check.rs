//! Central finite differences against backprop for CE + confidence
//! regularizer through a small MLP.

use cores_sieve::loss::{cr_term, cr_term_grad, cross_entropy, cross_entropy_grad, NoisyPrior};
use cores_sieve::model::{Architecture, Classifier};

fn main() -> cores_sieve::Result<()> {
    let arch = Architecture::Mlp { hidden: 6 };
    let (dim, k) = (4, 3);
    let model = Classifier::new(arch, dim, k, 7)?;
    let prior = NoisyPrior::new(vec![0.5, 0.3, 0.2])?;
    let (x, y, beta) = ([0.4, -1.1, 0.8, 0.2], 1, 1.5);

    let loss = |m: &Classifier| -> cores_sieve::Result<f64> {
        let p = m.forward(&x)?;
        Ok(cross_entropy(&p, y) + cr_term(&p, &prior, beta))
    };
    let p = model.forward(&x)?;
    let dprobs: Vec<f64> =
        cross_entropy_grad(&p, y).iter().zip(cr_term_grad(&p, &prior, beta)).map(|(a, b)| a + b).collect();
    let analytic = model.backward(&[&x], &[dprobs])?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..model.params().len() {
        let mut up = model.clone();
        up.params_mut()[i] += h;
        let mut down = model.clone();
        down.params_mut()[i] -= h;
        let fd = (loss(&up)? - loss(&down)?) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-4));
    }
    println!("{} parameters, worst relative error {worst:.2e}", model.params().len());
    Ok(())
}
