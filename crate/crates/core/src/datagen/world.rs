//! Finite, exactly enumerable joint distributions over (X, Y, Ỹ).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest atom count accepted.
pub const MAX_ATOMS: usize = 16;
/// Largest class count accepted.
pub const MAX_CLASSES: usize = 8;

const SUM_TOL: f64 = 1e-9;

/// `M` feature atoms with `P(X)`, `P(Y|X)` and a per-atom row-stochastic
/// transition matrix `T(X)[i][j] = P(Ỹ=j | Y=i, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld", into = "RawWorld")]
pub struct DiscreteWorld {
    feature_atoms: Vec<Vec<f64>>,
    p_x: Vec<f64>,
    p_y_given_x: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    #[serde(default)]
    feature_atoms: Vec<Vec<f64>>,
    p_x: Vec<f64>,
    p_y_given_x: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawWorld> for DiscreteWorld {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        DiscreteWorld::new(raw.feature_atoms, raw.p_x, raw.p_y_given_x, raw.transitions)
    }
}

impl From<DiscreteWorld> for RawWorld {
    fn from(w: DiscreteWorld) -> Self {
        RawWorld { feature_atoms: w.feature_atoms, p_x: w.p_x, p_y_given_x: w.p_y_given_x, transitions: w.transitions }
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidWorld(format!("{what} has entry {v} outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidWorld(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl DiscreteWorld {
    /// Validates and builds a world. An empty `feature_atoms` list is replaced
    /// by one-dimensional atom ids `0, 1, ..`.
    pub fn new(
        feature_atoms: Vec<Vec<f64>>,
        p_x: Vec<f64>,
        p_y_given_x: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let m = p_x.len();
        if m == 0 || m > MAX_ATOMS {
            return Err(Error::InvalidWorld(format!("atom count {m} outside [1, {MAX_ATOMS}]")));
        }
        let k = p_y_given_x.first().map_or(0, Vec::len);
        if !(2..=MAX_CLASSES).contains(&k) {
            return Err(Error::InvalidWorld(format!("class count {k} outside [2, {MAX_CLASSES}]")));
        }
        if p_y_given_x.len() != m || transitions.len() != m {
            return Err(Error::InvalidWorld(format!(
                "p_x has {m} atoms but p_y_given_x has {} rows and transitions has {} matrices",
                p_y_given_x.len(),
                transitions.len()
            )));
        }
        let feature_atoms = if feature_atoms.is_empty() {
            (0..m).map(|x| vec![x as f64]).collect()
        } else if feature_atoms.len() != m {
            return Err(Error::InvalidWorld(format!("{} feature atoms for {m} probabilities", feature_atoms.len())));
        } else {
            feature_atoms
        };
        check_distribution(&p_x, "p_x")?;
        for (x, row) in p_y_given_x.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidWorld(format!(
                    "p_y_given_x row {x} has {} entries, expected {k}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("p_y_given_x row {x}"))?;
        }
        for (x, t) in transitions.iter().enumerate() {
            if t.len() != k {
                return Err(Error::InvalidWorld(format!("transition matrix {x} has {} rows, expected {k}", t.len())));
            }
            for (i, row) in t.iter().enumerate() {
                if row.len() != k {
                    return Err(Error::InvalidWorld(format!(
                        "transition matrix {x} row {i} has {} entries, expected {k}",
                        row.len()
                    )));
                }
                check_distribution(row, &format!("transition matrix {x} row {i}"))?;
            }
        }
        Ok(Self { feature_atoms, p_x, p_y_given_x, transitions })
    }

    /// World whose transition matrix is the same at every atom.
    pub fn feature_independent(p_x: Vec<f64>, p_y_given_x: Vec<Vec<f64>>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let m = p_x.len();
        Self::new(Vec::new(), p_x, p_y_given_x, vec![transition; m])
    }

    pub fn num_atoms(&self) -> usize {
        self.p_x.len()
    }

    pub fn num_classes(&self) -> usize {
        self.p_y_given_x[0].len()
    }

    pub fn feature_atoms(&self) -> &[Vec<f64>] {
        &self.feature_atoms
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn p_y_given_x(&self) -> &[Vec<f64>] {
        &self.p_y_given_x
    }

    /// `T(x)[i][j]`.
    pub fn transition(&self, x: usize) -> &[Vec<f64>] {
        &self.transitions[x]
    }

    pub fn transitions(&self) -> &[Vec<Vec<f64>>] {
        &self.transitions
    }

    /// Clean prior `P(Y=i)`.
    pub fn clean_prior(&self) -> Vec<f64> {
        let k = self.num_classes();
        let mut prior = vec![0.0; k];
        for (px, row) in self.p_x.iter().zip(&self.p_y_given_x) {
            for (p, py) in prior.iter_mut().zip(row) {
                *p += px * py;
            }
        }
        prior
    }

    /// Noisy prior `P(Ỹ=j) = Σ_x P(x) Σ_i P(i|x) T_ij(x)`.
    pub fn noisy_prior(&self) -> Vec<f64> {
        let k = self.num_classes();
        let mut prior = vec![0.0; k];
        for x in 0..self.num_atoms() {
            for i in 0..k {
                let w = self.p_x[x] * self.p_y_given_x[x][i];
                for (p, t) in prior.iter_mut().zip(&self.transitions[x][i]) {
                    *p += w * t;
                }
            }
        }
        prior
    }

    /// Class-conditional expected transition `T_ij = E[T_ij(X) | Y=i]`.
    pub fn expected_transition(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.num_classes();
        let prior = self.clean_prior();
        if let Some(i) = prior.iter().position(|&p| p <= 0.0) {
            return Err(Error::InvalidWorld(format!("class {i} has zero clean probability")));
        }
        let mut t = vec![vec![0.0; k]; k];
        for x in 0..self.num_atoms() {
            for i in 0..k {
                let w = self.p_x[x] * self.p_y_given_x[x][i] / prior[i];
                for j in 0..k {
                    t[i][j] += w * self.transitions[x][i][j];
                }
            }
        }
        Ok(t)
    }

    /// Bayes-optimal label per atom; ties go to the smallest index.
    pub fn bayes_labels(&self) -> Vec<usize> {
        self.p_y_given_x.iter().map(|row| argmax(row)).collect()
    }

    /// True when every atom belongs to exactly one class, so the clean label
    /// is always the Bayes-optimal one.
    pub fn labels_are_deterministic(&self) -> bool {
        self.p_y_given_x.iter().all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Stable 64-bit FNV-1a digest of the world's numeric content.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.num_atoms() as f64);
        feed(self.num_classes() as f64);
        self.feature_atoms.iter().flatten().for_each(|&v| feed(v));
        self.p_x.iter().for_each(|&v| feed(v));
        self.p_y_given_x.iter().flatten().for_each(|&v| feed(v));
        self.transitions.iter().flatten().flatten().for_each(|&v| feed(v));
        format!("{h:016x}")
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
