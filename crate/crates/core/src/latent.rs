//! The discrete latent space: M independent K-way categorical variables.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Var};
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-6;
const GUMBEL_EPS: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    /// Number of categorical variables (M).
    pub num_vars: usize,
    /// Classes per variable (K).
    pub num_classes: usize,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
}

impl LatentSpec {
    pub fn new(num_vars: usize, num_classes: usize, temperature: f64) -> Result<Self> {
        if num_vars < 1 {
            return Err(Error::invalid("latent space needs at least one variable"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("latent variables need at least two classes"));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(Self {
            num_vars,
            num_classes,
            temperature,
        })
    }

    /// Number of distinct assignments, saturating.
    pub fn num_assignments(&self) -> u128 {
        (self.num_classes as u128).saturating_pow(self.num_vars as u32)
    }
}

fn check_simplex(rows: &Matrix, what: &str) -> Result<()> {
    for (m, row) in rows.rows().into_iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!("{what} row {m} has a negative entry")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("{what} row {m} sums to {s}")));
        }
    }
    Ok(())
}

/// Per-sentence posteriors, one probability row per latent variable (M×K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStack {
    rows: Matrix,
}

impl PosteriorStack {
    pub fn new(rows: Matrix) -> Result<Self> {
        check_simplex(&rows, "posterior")?;
        Ok(Self { rows })
    }

    pub fn uniform(spec: &LatentSpec) -> Self {
        let k = spec.num_classes;
        Self {
            rows: Array2::from_elem((spec.num_vars, k), 1.0 / k as f64),
        }
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn num_vars(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.ncols()
    }
}

/// Hard codes, one class index per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatentAssignment {
    codes: Vec<usize>,
}

impl LatentAssignment {
    pub fn new(codes: Vec<usize>, spec: &LatentSpec) -> Result<Self> {
        if codes.len() != spec.num_vars {
            return Err(Error::Shape(format!(
                "assignment has {} codes, latent space has {} variables",
                codes.len(),
                spec.num_vars
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c >= spec.num_classes) {
            return Err(Error::invalid(format!(
                "code {c} out of range for K={}",
                spec.num_classes
            )));
        }
        Ok(Self { codes })
    }

    /// Builds an assignment without range validation.
    pub fn from_codes(codes: Vec<usize>) -> Self {
        Self { codes }
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Exact one-hot encoding as an M×K matrix.
    pub fn one_hot(&self, num_classes: usize) -> Matrix {
        let mut m = Matrix::zeros((self.codes.len(), num_classes));
        for (i, &c) in self.codes.iter().enumerate() {
            m[[i, c]] = 1.0;
        }
        m
    }

    /// Number of variables on which two assignments differ.
    pub fn hamming(&self, other: &Self) -> usize {
        self.codes
            .iter()
            .zip(&other.codes)
            .filter(|(a, b)| a != b)
            .count()
    }
}

impl fmt::Display for LatentAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.codes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for LatentAssignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let codes = s
            .trim()
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad latent code {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { codes })
    }
}

/// Gumbel-Softmax output rows (M×K), used as soft one-hots.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedSample {
    rows: Matrix,
}

impl RelaxedSample {
    pub fn new(rows: Matrix) -> Result<Self> {
        check_simplex(&rows, "relaxed sample")?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Argmax per row (lowest index on ties).
    pub fn hard(&self) -> LatentAssignment {
        LatentAssignment::from_codes(self.rows.rows().into_iter().map(|r| argmax(r.iter())).collect())
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax<'a>(values: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Standard Gumbel noise `-ln(-ln(u + eps) + eps)`, `eps = 1e-20`.
pub fn gumbel_noise<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Matrix {
    Matrix::from_shape_simple_fn(shape, || {
        let u: f64 = rng.gen();
        -(-(u + GUMBEL_EPS).ln() + GUMBEL_EPS).ln()
    })
}

/// Differentiable relaxed sample `softmax((logits + noise) / tau)` on a graph.
pub fn gumbel_softmax_node(g: &mut Graph, logits: Var, noise: &Matrix, tau: f64) -> Var {
    let n = g.constant(noise.clone());
    let perturbed = g.add(logits, n);
    let scaled = g.scale(perturbed, 1.0 / tau);
    g.softmax(scaled)
}

/// Relaxed sample with explicit noise.
pub fn gumbel_softmax_with_noise(logits: &Matrix, noise: &Matrix, tau: f64) -> Result<RelaxedSample> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if logits.dim() != noise.dim() {
        return Err(Error::Shape("noise shape differs from logits".into()));
    }
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let y = gumbel_softmax_node(&mut g, l, noise, tau);
    Ok(RelaxedSample {
        rows: g.value(y).clone(),
    })
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &Matrix,
    tau: f64,
    rng: &mut R,
) -> Result<RelaxedSample> {
    let noise = gumbel_noise(logits.dim(), rng);
    gumbel_softmax_with_noise(logits, &noise, tau)
}

/// Greedy code: argmax of every posterior row.
pub fn greedy_map(posteriors: &PosteriorStack) -> LatentAssignment {
    LatentAssignment::from_codes(
        posteriors
            .rows
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter()))
            .collect(),
    )
}

/// Greedy codes for each row of M per-variable probability (or logit) matrices (N×K each).
pub fn greedy_map_batch(per_var: &[Matrix]) -> Vec<LatentAssignment> {
    let n = per_var.first().map_or(0, |m| m.nrows());
    (0..n)
        .map(|i| {
            LatentAssignment::from_codes(per_var.iter().map(|m| argmax(m.row(i).iter())).collect())
        })
        .collect()
}

/// Sets variable `m` to `new_value`, leaving the rest untouched.
pub fn flip_code(
    assignment: &LatentAssignment,
    m: usize,
    new_value: usize,
    spec: &LatentSpec,
) -> Result<LatentAssignment> {
    if m >= assignment.codes.len() {
        return Err(Error::invalid(format!(
            "variable index {m} out of range for M={}",
            assignment.codes.len()
        )));
    }
    if new_value >= spec.num_classes {
        return Err(Error::invalid(format!(
            "class {new_value} out of range for K={}",
            spec.num_classes
        )));
    }
    let mut codes = assignment.codes.clone();
    codes[m] = new_value;
    Ok(LatentAssignment { codes })
}

/// Walk from `from` to `to` flipping one differing variable per step, ascending index.
/// The first element is `from` itself.
pub fn flip_path(
    from: &LatentAssignment,
    to: &LatentAssignment,
    spec: &LatentSpec,
) -> Result<Vec<LatentAssignment>> {
    if from.len() != to.len() {
        return Err(Error::Shape("assignments differ in length".into()));
    }
    let mut path = vec![from.clone()];
    let mut cur = from.clone();
    for m in 0..from.len() {
        if cur.codes[m] != to.codes[m] {
            cur = flip_code(&cur, m, to.codes[m], spec)?;
            path.push(cur.clone());
        }
    }
    Ok(path)
}
