//! Model parameters: mutation rate, mutation matrix and selection parameters.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Row sums of the mutation matrix must equal one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Rows equal within this tolerance componentwise are treated as identical.
pub const PIM_TOLERANCE: f64 = 1e-12;

/// Unvalidated parameters, as read from a config file or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub d: usize,
    pub theta: f64,
    /// Row-major `d × d` mutation probability matrix.
    pub p: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("mutation rate theta must be positive and finite, got {0}")]
    NonPositiveTheta(f64),
    #[error("row {row} of P is not a probability vector (sum {sum}, min entry {min})")]
    NonStochasticRow { row: usize, sum: f64, min: f64 },
    #[error("mutation matrix P is reducible: type {from} cannot reach type {to}")]
    ReducibleMatrix { from: usize, to: usize },
    #[error("selection parameter gamma[{index}] = {value} is positive")]
    PositiveGamma { index: usize, value: f64 },
}

/// Every violated constraint found while validating a [`RawParams`].
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationReport(pub Vec<ParamError>);

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model parameters:")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl ValidationReport {
    pub fn errors(&self) -> &[ParamError] {
        &self.0
    }
}

/// Validated model parameters. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    d: usize,
    theta: f64,
    p: Vec<f64>,
    gamma: Vec<f64>,
    branching_bound: f64,
    pim: Option<Vec<f64>>,
}

impl ModelParams {
    pub fn new(d: usize, theta: f64, p: Vec<f64>, gamma: Vec<f64>) -> Result<Self, ValidationReport> {
        Self::validate(RawParams { d, theta, p, gamma })
    }

    /// Neutral parent-independent mutation with `P_ij = Q_j`.
    pub fn pim(theta: f64, q: &[f64]) -> Result<Self, ValidationReport> {
        let d = q.len();
        let p = (0..d).flat_map(|_| q.iter().copied()).collect();
        Self::new(d, theta, p, vec![0.0; d])
    }

    pub fn validate(raw: RawParams) -> Result<Self, ValidationReport> {
        let RawParams { d, theta, p, gamma } = raw;
        let mut errors = Vec::new();
        if d < 2 {
            errors.push(ParamError::BadDimension(format!("d = {d}, need d >= 2")));
        }
        if p.len() != d * d {
            errors.push(ParamError::BadDimension(format!(
                "P has {} entries, expected {}",
                p.len(),
                d * d
            )));
        }
        if gamma.len() != d {
            errors.push(ParamError::BadDimension(format!(
                "gamma has {} entries, expected {d}",
                gamma.len()
            )));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            errors.push(ParamError::NonPositiveTheta(theta));
        }
        if !errors.is_empty() {
            return Err(ValidationReport(errors));
        }

        let mut rows_ok = true;
        for (row, chunk) in p.chunks(d).enumerate() {
            let sum: f64 = chunk.iter().sum();
            let min = chunk.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min >= 0.0) || !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                errors.push(ParamError::NonStochasticRow { row, sum, min });
                rows_ok = false;
            }
        }
        if rows_ok {
            if let Some((from, to)) = unreachable_pair(d, &p) {
                errors.push(ParamError::ReducibleMatrix { from, to });
            }
        }
        for (index, &value) in gamma.iter().enumerate() {
            if !(value <= 0.0) {
                errors.push(ParamError::PositiveGamma { index, value });
            }
        }
        if !errors.is_empty() {
            return Err(ValidationReport(errors));
        }

        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = gamma.iter().copied().fold(f64::INFINITY, f64::min);
        let first = &p[..d];
        let pim = p
            .chunks(d)
            .all(|row| row.iter().zip(first).all(|(a, b)| (a - b).abs() <= PIM_TOLERANCE))
            .then(|| first.to_vec());
        Ok(Self { d, theta, p, gamma, branching_bound: max - min, pim })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Mutation probability `P_ij` (type `i` to type `j`).
    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.d + j]
    }

    pub fn mutation_matrix(&self) -> &[f64] {
        &self.p
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `max_{i,j} (γ_i − γ_j)`.
    pub fn branching_bound(&self) -> f64 {
        self.branching_bound
    }

    pub fn is_neutral(&self) -> bool {
        self.gamma.iter().all(|&g| g == 0.0)
    }

    /// All rows of `P` identical.
    pub fn is_pim(&self) -> bool {
        self.pim.is_some()
    }

    /// The common row `Q` when mutation is parent independent.
    pub fn pim_q(&self) -> Option<&[f64]> {
        self.pim.as_deref()
    }

    pub fn to_raw(&self) -> RawParams {
        RawParams {
            d: self.d,
            theta: self.theta,
            p: self.p.clone(),
            gamma: self.gamma.clone(),
        }
    }

    /// Invariant distribution of `P` (`q P = q`, `Σ q = 1`).
    pub fn mutation_stationary(&self) -> Vec<f64> {
        let d = self.d;
        // (P^T − I) q = 0 with the last row replaced by Σ q = 1
        let mut a = DMatrix::from_fn(d, d, |r, c| self.p(c, r) - if r == c { 1.0 } else { 0.0 });
        for c in 0..d {
            a[(d - 1, c)] = 1.0;
        }
        let mut b = DVector::zeros(d);
        b[d - 1] = 1.0;
        let q = a.lu().solve(&b).expect("irreducible P has a unique invariant distribution");
        q.iter().copied().collect()
    }

    /// Stable hex digest of the parameters, used to tag outputs.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        h.update(self.theta.to_bits().to_le_bytes());
        for v in self.p.iter().chain(&self.gamma) {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Boolean transitive closure of the off-diagonal support of `P`.
fn unreachable_pair(d: usize, p: &[f64]) -> Option<(usize, usize)> {
    let mut reach: Vec<bool> = (0..d * d).map(|k| k / d == k % d || p[k] > 0.0).collect();
    for k in 0..d {
        for i in 0..d {
            if reach[i * d + k] {
                for j in 0..d {
                    if reach[k * d + j] {
                        reach[i * d + j] = true;
                    }
                }
            }
        }
    }
    (0..d * d).find(|&k| !reach[k]).map(|k| (k / d, k % d))
}
