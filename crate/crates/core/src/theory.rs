//! Exact oracles on [`DiscreteWorld`]s: the decoupled form of the regularized
//! risk, the admissible β interval, the informativeness condition, the
//! label-shift threshold and the clean/noisy loss variance example.
//!
//! Prediction tables are `M×K` row-stochastic matrices, one row per atom.
//! All losses go through [`cross_entropy`], so the `1e-12` floor applies.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datagen::DiscreteWorld;
use crate::loss::cross_entropy;
use crate::{Error, Result};

/// Decoupling identity tolerance.
pub const DECOUPLING_TOL: f64 = 1e-9;
/// Noisy priors closer than this count as equal when ordering pairs.
pub const PRIOR_TOL: f64 = 1e-12;
/// `Δ̄` at or below this counts as zero, so equal diagonals that differ only
/// by rounding give `Term-2 = 0`.
pub const DELTA_TOL: f64 = 1e-12;
/// Largest `K^M` enumerated by [`brute_force_confident_minimizer`].
pub const MAX_TABLES: usize = 1 << 20;

fn check_table(world: &DiscreteWorld, f: &[Vec<f64>]) -> Result<()> {
    let (m, k) = (world.num_atoms(), world.num_classes());
    if f.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: f.len() });
    }
    for (x, row) in f.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: row.len() });
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("prediction row {x} is not a probability vector")));
        }
    }
    Ok(())
}

fn loss_table(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    f.iter().map(|row| (0..row.len()).map(|j| cross_entropy(row, j)).collect()).collect()
}

/// `E_{D̃}[ℓ(f(X), Ỹ) + ℓ_CR(f(X))]` by enumeration over atoms and labels.
pub fn exact_regularized_risk(world: &DiscreteWorld, f: &[Vec<f64>], beta: f64) -> Result<f64> {
    check_table(world, f)?;
    let k = world.num_classes();
    let noisy = world.noisy_prior();
    let losses = loss_table(f);
    let mut risk = 0.0;
    for (x, &px) in world.p_x().iter().enumerate() {
        let t = world.transition(x);
        let mut atom = 0.0;
        for i in 0..k {
            let py = world.p_y_given_x()[x][i];
            for j in 0..k {
                atom += py * t[i][j] * losses[x][j];
            }
        }
        for j in 0..k {
            atom -= beta * noisy[j] * losses[x][j];
        }
        risk += px * atom;
    }
    Ok(risk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledTerms {
    pub lhs: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    /// `min_j T_jj`.
    pub t_underline: f64,
    pub delta_bar: f64,
    /// `Δ_j = T_jj − T̲`.
    pub delta: Vec<f64>,
    /// `U(x)` per atom.
    pub u: Vec<Vec<Vec<f64>>>,
    /// Class-conditional expected transition `T_ij`.
    pub row_t: Vec<Vec<f64>>,
}

impl DecoupledTerms {
    pub fn residual(&self) -> f64 {
        self.lhs - (self.term1 + self.term2 + self.term3)
    }
}

/// `U_ij(x) = T_ij(x)` off the diagonal and `T_jj(x) − T_jj` on it.
pub fn residual_transitions(world: &DiscreteWorld, row_t: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    world
        .transitions()
        .iter()
        .map(|t| {
            t.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter().enumerate().map(|(j, &v)| if i == j { v - row_t[j][j] } else { v }).collect()
                })
                .collect()
        })
        .collect()
}

/// Splits the regularized risk into the clean risk (`Term-1`), the
/// prior-shift part (`Term-2`) and the noise/regularizer part (`Term-3`).
/// Fails with [`Error::DecouplingMismatch`] if the parts do not add up.
pub fn decouple(world: &DiscreteWorld, f: &[Vec<f64>], beta: f64) -> Result<DecoupledTerms> {
    let lhs = exact_regularized_risk(world, f, beta)?;
    let k = world.num_classes();
    let row_t = world.expected_transition()?;
    let clean = world.clean_prior();
    let noisy = world.noisy_prior();
    let t_underline = (0..k).map(|j| row_t[j][j]).fold(f64::INFINITY, f64::min);
    let delta: Vec<f64> = (0..k).map(|j| row_t[j][j] - t_underline).collect();
    let delta_bar: f64 = delta.iter().zip(&clean).map(|(d, p)| d * p).sum();
    let u = residual_transitions(world, &row_t);
    let losses = loss_table(f);

    let (mut clean_risk, mut shifted, mut term3) = (0.0, 0.0, 0.0);
    for (x, &px) in world.p_x().iter().enumerate() {
        for i in 0..k {
            let w = px * world.p_y_given_x()[x][i];
            clean_risk += w * losses[x][i];
            shifted += w * delta[i] * losses[x][i];
            for j in 0..k {
                term3 += w * (u[x][i][j] - beta * noisy[j]) * losses[x][j];
            }
        }
    }
    let term2 = if delta_bar > DELTA_TOL { shifted } else { 0.0 };
    let terms =
        DecoupledTerms { lhs, term1: t_underline * clean_risk, term2, term3, t_underline, delta_bar, delta, u, row_t };
    if terms.residual().abs() > DECOUPLING_TOL {
        return Err(Error::DecouplingMismatch { lhs, sum: terms.term1 + terms.term2 + terms.term3 });
    }
    Ok(terms)
}

/// Admissible range of β. `upper` is `+∞` when no pair of classes has
/// strictly ordered noisy priors.
///
/// `upper` carries a `T_jj − T_ii` offset in its numerator. `per_atom_upper`
/// drops it: `min (T_ii(x) − T_ij(x)) / (P(Ỹ=i) − P(Ỹ=j))` over the same pairs
/// and atoms, which is the condition under which a confident wrong prediction
/// at an atom of class `i` never lowers the risk. The two coincide when the
/// expected diagonals are equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaInterval {
    pub lower: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub upper: f64,
    pub feasible: bool,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub per_atom_upper: f64,
}

impl BetaInterval {
    pub fn contains(&self, beta: f64) -> bool {
        self.lower <= beta && beta <= self.upper
    }
}

pub(crate) fn ser_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

pub(crate) fn de_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
    }
}

pub fn beta_interval(world: &DiscreteWorld) -> Result<BetaInterval> {
    let k = world.num_classes();
    let noisy = world.noisy_prior();
    if let Some(j) = noisy.iter().position(|&p| p <= 0.0) {
        return Err(Error::InvalidWorld(format!("noisy class {j} has zero probability")));
    }
    let row_t = world.expected_transition()?;
    let u = residual_transitions(world, &row_t);
    let mut lower = f64::NEG_INFINITY;
    for ux in &u {
        for row in ux {
            for (j, &v) in row.iter().enumerate() {
                lower = lower.max(v / noisy[j]);
            }
        }
    }
    let mut upper = f64::INFINITY;
    let mut per_atom_upper = f64::INFINITY;
    for i in 0..k {
        for j in 0..k {
            if noisy[i] <= noisy[j] + PRIOR_TOL {
                continue;
            }
            let gap = noisy[i] - noisy[j];
            for t in world.transitions() {
                upper = upper.min((row_t[j][j] - row_t[i][i] + t[i][i] - t[i][j]) / gap);
                per_atom_upper = per_atom_upper.min((t[i][i] - t[i][j]) / gap);
            }
        }
    }
    Ok(BetaInterval { lower, upper, feasible: lower <= upper, per_atom_upper })
}

/// A violated informativeness condition at atom `atom` for classes `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub i: usize,
    pub j: usize,
    pub atom: usize,
}

/// Checks `T_ii(x) − T_ij(x) > T_ii − T_jj` for all `i ≠ j` and atoms.
/// Returns every violating triple; empty means the condition holds.
pub fn assumption2_check(world: &DiscreteWorld) -> Result<Vec<Witness>> {
    let k = world.num_classes();
    let row_t = world.expected_transition()?;
    let mut witnesses = Vec::new();
    for (atom, t) in world.transitions().iter().enumerate() {
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                if t[i][i] - t[i][j] <= row_t[i][i] - row_t[j][j] {
                    witnesses.push(Witness { i, j, atom });
                }
            }
        }
    }
    Ok(witnesses)
}

/// Per-sample loss variance `(clean, noisy)` for a confident classifier
/// whose loss is `l_min` on correct labels and `l_max` on wrong ones, with a
/// fraction `eps` of labels corrupted.
pub fn variance_example(eps: f64, l_max: f64, l_min: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
    }
    if !(l_max >= l_min) {
        return Err(Error::InvalidArgument(format!("l_max {l_max} below l_min {l_min}")));
    }
    Ok((0.0, eps * (1.0 - eps) * (l_max - l_min).powi(2)))
}

/// `min_{i,j} T_jj / (T_ii + T_jj)` over the expected transition matrix.
/// Pairs with `T_ii + T_jj = 0` are skipped.
pub fn label_shift_bound(world: &DiscreteWorld) -> Result<f64> {
    let t = world.expected_transition()?;
    let k = t.len();
    let mut bound = f64::INFINITY;
    for i in 0..k {
        for j in 0..k {
            let den = t[i][i] + t[j][j];
            if den > 0.0 {
                bound = bound.min(t[j][j] / den);
            }
        }
    }
    Ok(bound)
}

/// Best one-hot prediction table found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidentMinimizer {
    /// Predicted class per atom.
    pub labels: Vec<usize>,
    pub risk: f64,
    /// Risk gap to the best table with different labels (`+∞` if `K^M = 1`).
    pub margin: f64,
}

pub fn one_hot_table(labels: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&y| {
            let mut row = vec![0.0; num_classes];
            row[y] = 1.0;
            row
        })
        .collect()
}

/// Minimizes [`exact_regularized_risk`] over all `K^M` one-hot tables.
pub fn brute_force_confident_minimizer(world: &DiscreteWorld, beta: f64) -> Result<ConfidentMinimizer> {
    let (m, k) = (world.num_atoms(), world.num_classes());
    let count = k.checked_pow(m as u32).filter(|&c| c <= MAX_TABLES).ok_or_else(|| {
        Error::InvalidArgument(format!("{k}^{m} confident tables exceed the enumeration cap {MAX_TABLES}"))
    })?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut second = f64::INFINITY;
    let mut labels = vec![0usize; m];
    for code in 0..count {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let risk = exact_regularized_risk(world, &one_hot_table(&labels, k), beta)?;
        match &best {
            Some((_, b)) if risk >= *b => second = second.min(risk),
            Some((_, b)) => {
                second = *b;
                best = Some((labels.clone(), risk));
            }
            None => best = Some((labels.clone(), risk)),
        }
    }
    let (labels, risk) = best.expect("at least one table");
    Ok(ConfidentMinimizer { labels, risk, margin: second - risk })
}

/// JSON summary emitted by the `oracle` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub world_hash: String,
    pub beta: f64,
    pub lhs: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub beta_lower: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub beta_upper: f64,
    pub beta_feasible: bool,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub beta_per_atom_upper: f64,
    pub assumption2_ok: bool,
    pub witnesses: Vec<Witness>,
    pub label_shift_bound: f64,
}

/// Noisy posterior `P(Ỹ=j | x)` per atom, a natural default prediction table.
pub fn noisy_posterior(world: &DiscreteWorld) -> Vec<Vec<f64>> {
    let k = world.num_classes();
    (0..world.num_atoms())
        .map(|x| {
            let t = world.transition(x);
            (0..k).map(|j| (0..k).map(|i| world.p_y_given_x()[x][i] * t[i][j]).sum()).collect()
        })
        .collect()
}

pub fn oracle_report(world: &DiscreteWorld, f: &[Vec<f64>], beta: f64) -> Result<OracleReport> {
    let terms = decouple(world, f, beta)?;
    let interval = beta_interval(world)?;
    let witnesses = assumption2_check(world)?;
    Ok(OracleReport {
        world_hash: world.digest(),
        beta,
        lhs: terms.lhs,
        term1: terms.term1,
        term2: terms.term2,
        term3: terms.term3,
        beta_lower: interval.lower,
        beta_upper: interval.upper,
        beta_feasible: interval.feasible,
        beta_per_atom_upper: interval.per_atom_upper,
        assumption2_ok: witnesses.is_empty(),
        witnesses,
        label_shift_bound: label_shift_bound(world)?,
    })
}
