#![allow(dead_code)]

use cores_sieve::datagen::DiscreteWorld;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn nll(p: f64) -> f64 {
    -p.max(1e-12).ln()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Row-stochastic matrix with diagonal in `[lo, hi)` and the rest spread at random.
pub fn random_transition(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let d = rng.random_range(lo..hi);
            let rest = random_simplex(rng, k - 1);
            let mut row = Vec::with_capacity(k);
            let mut it = rest.into_iter();
            for j in 0..k {
                row.push(if j == i { d } else { (1.0 - d) * it.next().unwrap() });
            }
            row
        })
        .collect()
}

/// Soft `P(Y|X)`, arbitrary transitions.
pub fn random_world(rng: &mut ChaCha8Rng, m: usize, k: usize) -> DiscreteWorld {
    let p_x = random_simplex(rng, m);
    let p_y = (0..m).map(|_| random_simplex(rng, k)).collect();
    let t = (0..m).map(|_| random_transition(rng, k, 0.0, 1.0)).collect();
    DiscreteWorld::new(Vec::new(), p_x, p_y, t).unwrap()
}

/// One-hot `P(Y|X)` covering every class, diagonals in `[0.5, 0.95)`.
pub fn deterministic_world(rng: &mut ChaCha8Rng, k: usize, m: usize) -> DiscreteWorld {
    let mut labels: Vec<usize> = (0..m).map(|x| if x < k { x } else { rng.random_range(0..k) }).collect();
    for i in (1..m).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let p_x = random_simplex(rng, m);
    let p_y = labels.iter().map(|&y| (0..k).map(|c| if c == y { 1.0 } else { 0.0 }).collect()).collect();
    let t = (0..m).map(|_| random_transition(rng, k, 0.5, 0.95)).collect();
    DiscreteWorld::new(Vec::new(), p_x, p_y, t).unwrap()
}

pub fn random_table(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| random_simplex(rng, k)).collect()
}

/// Joint `P(X=x, Y=y, Ỹ=ỹ)` listed triple by triple.
pub fn triples(w: &DiscreteWorld) -> Vec<(usize, usize, usize, f64)> {
    let k = w.num_classes();
    let mut out = Vec::new();
    for x in 0..w.num_atoms() {
        for y in 0..k {
            for yt in 0..k {
                out.push((x, y, yt, w.p_x()[x] * w.p_y_given_x()[x][y] * w.transition(x)[y][yt]));
            }
        }
    }
    out
}

pub fn noisy_marginal(w: &DiscreteWorld) -> Vec<f64> {
    let mut p = vec![0.0; w.num_classes()];
    for (_, _, yt, mass) in triples(w) {
        p[yt] += mass;
    }
    p
}

/// `E[ℓ(f(X), Ỹ)] − β E_X Σ_j P(Ỹ=j) ℓ(f(X), j)` summed over triples.
pub fn enumerated_risk(w: &DiscreteWorld, f: &[Vec<f64>], beta: f64) -> f64 {
    let prior = noisy_marginal(w);
    let data: f64 = triples(w).into_iter().map(|(x, _, yt, mass)| mass * nll(f[x][yt])).sum();
    let reg: f64 = (0..w.num_atoms())
        .map(|x| w.p_x()[x] * prior.iter().enumerate().map(|(j, pj)| pj * nll(f[x][j])).sum::<f64>())
        .sum();
    data - beta * reg
}

pub fn one_hot_rows(labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    labels.iter().map(|&y| (0..k).map(|c| if c == y { 1.0 } else { 0.0 }).collect()).collect()
}

/// Arg-min of [`enumerated_risk`] over all `K^M` one-hot tables. Ties keep the
/// first labeling in odometer order.
pub fn confident_argmin(w: &DiscreteWorld, beta: f64) -> (Vec<usize>, f64) {
    let (m, k) = (w.num_atoms(), w.num_classes());
    let mut labels = vec![0usize; m];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let r = enumerated_risk(w, &one_hot_rows(&labels, k), beta);
        if r < best.1 {
            best = (labels.clone(), r);
        }
        let mut d = 0;
        while d < m {
            labels[d] += 1;
            if labels[d] < k {
                break;
            }
            labels[d] = 0;
            d += 1;
        }
        if d == m {
            return best;
        }
    }
}

pub fn bayes(w: &DiscreteWorld) -> Vec<usize> {
    w.p_y_given_x()
        .iter()
        .map(|row| {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// `Σ_{x: Y(x)=i} P(x) T(x)[i][j] / P(Y=i)` for one-hot worlds and soft ones alike.
pub fn class_mean_transition(w: &DiscreteWorld) -> Vec<Vec<f64>> {
    let k = w.num_classes();
    let mut t = vec![vec![0.0; k]; k];
    let mut py = vec![0.0; k];
    for (_, y, yt, mass) in triples(w) {
        t[y][yt] += mass;
    }
    for x in 0..w.num_atoms() {
        for y in 0..k {
            py[y] += w.p_x()[x] * w.p_y_given_x()[x][y];
        }
    }
    for i in 0..k {
        for j in 0..k {
            t[i][j] /= py[i];
        }
    }
    t
}

/// Central finite difference of `f` at `theta` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, theta: &[f64], i: usize, h: f64) -> f64 {
    let mut t = theta.to_vec();
    t[i] = theta[i] + h;
    let up = f(&t);
    t[i] = theta[i] - h;
    let down = f(&t);
    (up - down) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Draws deterministic-label worlds (`K ≤ 4`, `M ≤ 5`) until one satisfies the
/// informativeness condition with a nonempty β interval.
pub fn informative_world(rng: &mut ChaCha8Rng) -> (DiscreteWorld, cores_sieve::theory::BetaInterval) {
    loop {
        let k = rng.random_range(2..=4);
        let m = rng.random_range(k..=5);
        let w = deterministic_world(rng, k, m);
        if !cores_sieve::theory::assumption2_check(&w).unwrap().is_empty() {
            continue;
        }
        let iv = cores_sieve::theory::beta_interval(&w).unwrap();
        if iv.feasible {
            return (w, iv);
        }
    }
}

/// Binary worlds whose dominant noisy class has a nearly uninformative atom.
pub fn infeasible_worlds() -> Vec<DiscreteWorld> {
    [(0.55, 0.9), (0.5, 0.85), (0.52, 0.95), (0.6, 0.9), (0.5, 0.9), (0.51, 0.8)]
        .into_iter()
        .map(|(weak, strong)| {
            DiscreteWorld::new(
                Vec::new(),
                vec![0.4, 0.4, 0.2],
                vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![
                    vec![vec![strong, 1.0 - strong], vec![0.3, 0.7]],
                    vec![vec![weak, 1.0 - weak], vec![0.3, 0.7]],
                    vec![vec![0.9, 0.1], vec![0.3, 0.7]],
                ],
            )
            .unwrap()
        })
        .collect()
}

/// Midpoint of `[lo, hi]`, or `lo + 1` when `hi` is infinite.
pub fn pick_beta(lo: f64, hi: f64) -> f64 {
    if hi.is_finite() {
        0.5 * (lo + hi)
    } else {
        lo + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Regularized,
    Peer,
    Entropy,
    Kl,
}

pub const LOSS_KINDS: [LossKind; 5] =
    [LossKind::CrossEntropy, LossKind::Regularized, LossKind::Peer, LossKind::Entropy, LossKind::Kl];

/// Per-sample scalar loss and its gradient in probability space.
pub struct ProbeLoss {
    pub kind: LossKind,
    pub labels: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
    pub prior: cores_sieve::loss::NoisyPrior,
    pub beta: f64,
}

impl ProbeLoss {
    pub fn value(&self, n: usize, p: &[f64]) -> f64 {
        use cores_sieve::loss::*;
        match self.kind {
            LossKind::CrossEntropy => cross_entropy(p, self.labels[n]),
            LossKind::Regularized => cross_entropy(p, self.labels[n]) + cr_term(p, &self.prior, self.beta),
            LossKind::Peer => peer_loss(p, self.labels[n]),
            LossKind::Entropy => entropy_reg(p),
            LossKind::Kl => kl_consistency(p, &self.targets[n]),
        }
    }

    pub fn grad(&self, n: usize, p: &[f64]) -> Vec<f64> {
        use cores_sieve::loss::*;
        match self.kind {
            LossKind::CrossEntropy => cross_entropy_grad(p, self.labels[n]),
            LossKind::Regularized => cross_entropy_grad(p, self.labels[n])
                .into_iter()
                .zip(cr_term_grad(p, &self.prior, self.beta))
                .map(|(a, b)| a + b)
                .collect(),
            LossKind::Peer => peer_loss_grad(p, self.labels[n]),
            LossKind::Entropy => entropy_reg_grad(p),
            LossKind::Kl => kl_consistency_grad(p, &self.targets[n]),
        }
    }
}

/// One randomized finite-difference probe: random model, batch of 4, random
/// parameter coordinates. Returns the largest relative error, with
/// denominators floored at `1e-4`.
pub fn gradient_probe(seed: u64, arch: cores_sieve::model::Architecture, kind: LossKind, coords: usize) -> f64 {
    use cores_sieve::model::Classifier;
    let mut r = rng(seed);
    let (s, k, b) = (r.random_range(2..6), r.random_range(2..5), 4);
    let n = Classifier::param_count(arch, s, k);
    let theta: Vec<f64> = (0..n).map(|_| r.random_range(-0.8..0.8)).collect();
    let model = Classifier::from_params(arch, s, k, theta.clone()).unwrap();
    // keep every hidden unit away from the ReLU kink
    let mut xs: Vec<Vec<f64>> = Vec::new();
    while xs.len() < b {
        let x: Vec<f64> = (0..s).map(|_| r.random_range(-1.5..1.5)).collect();
        let clear = match model.hidden_pre_activations(&x).unwrap() {
            Some(h) => h.iter().all(|v| v.abs() > 1e-2),
            None => true,
        };
        if clear {
            xs.push(x);
        }
    }
    let loss = ProbeLoss {
        kind,
        labels: (0..b).map(|_| r.random_range(0..k)).collect(),
        targets: (0..b).map(|_| random_simplex(&mut r, k)).collect(),
        prior: cores_sieve::loss::NoisyPrior::new(random_simplex(&mut r, k)).unwrap(),
        beta: r.random_range(0.0..3.0),
    };
    let batch: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let dprobs: Vec<Vec<f64>> = xs.iter().enumerate().map(|(i, x)| loss.grad(i, &model.forward(x).unwrap())).collect();
    let analytic = model.backward(&batch, &dprobs).unwrap();
    let mut total = |t: &[f64]| {
        let m = Classifier::from_params(arch, s, k, t.to_vec()).unwrap();
        xs.iter().enumerate().map(|(i, x)| loss.value(i, &m.forward(x).unwrap())).sum::<f64>()
    };
    let mut worst = 0.0f64;
    for _ in 0..coords.min(n) {
        let i = r.random_range(0..n);
        let fd = central_diff(&mut total, &theta, i, 1e-5);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-4));
    }
    worst
}

/// The paired-comparison setting: K=4 blobs in 30 dimensions, separation 3.5,
/// N=5000 train and 2000 test, MLP(64).
pub struct Setting {
    pub train: cores_sieve::datagen::LabeledDataset,
    pub test: cores_sieve::datagen::LabeledDataset,
    pub cores: cores_sieve::sieve::CoresConfig,
    pub star: cores_sieve::consistency::ConsistencyConfig,
}

pub fn setting(seed: u64, noise: &cores_sieve::datagen::NoiseSpec, n: usize) -> Setting {
    use cores_sieve::consistency::ConsistencyConfig;
    use cores_sieve::datagen::make_blobs;
    use cores_sieve::model::Architecture;
    use cores_sieve::sieve::CoresConfig;
    let clean = make_blobs(n, 4, 30, 3.5, seed).unwrap();
    let (train, _) = noise.apply(&clean, seed + 100).unwrap();
    let test = make_blobs(2000, 4, 30, 3.5, seed + 1000).unwrap();
    let mut cores = CoresConfig::desk_scale(4, Architecture::Mlp { hidden: 64 });
    cores.train_seed = seed + 200;
    let mut star = ConsistencyConfig::for_budget(cores.schedule.ramp_end(), cores.optimizer.epochs);
    star.augmentation.seed = seed + 300;
    Setting { train, test, cores, star }
}

pub fn instance(eps: f64) -> cores_sieve::datagen::NoiseSpec {
    cores_sieve::datagen::NoiseSpec {
        kind: cores_sieve::datagen::NoiseKind::Instance,
        epsilon: eps,
        include_true_label: false,
        instance_params: None,
    }
}
