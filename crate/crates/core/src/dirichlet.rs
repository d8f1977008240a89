//! Dirichlet sampling through Gamma variables, the Gaussian limit of
//! rescaled Dirichlet laws and its local (sup-norm) form.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::replicate_rng;
use crate::diffusion::reduced_diffusion_matrix;
use crate::pim::dirichlet_log_density;
use crate::simplex::{DirectionY, SimplexPoint};
use crate::special::ln_beta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirichletError {
    #[error("Dirichlet parameters must be positive and finite, got {0:?}")]
    NonPositiveAlpha(Vec<f64>),
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("covariance is not positive definite")]
    SingularCovariance,
    #[error("mode lies on the boundary: alpha^(n)[{index}] = {value} <= 1")]
    ModeOnBoundary { index: usize, value: f64 },
    #[error("sup-norm grids are limited to d <= {max}, got d = {d}")]
    GridTooLarge { d: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn check_alpha(alpha: &[f64]) -> Result<(), DirichletError> {
    if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(DirichletError::NonPositiveAlpha(alpha.to_vec()));
    }
    Ok(())
}

/// `G / ‖G‖` for positive `g`.
pub fn dirichlet_from_gammas(g: &[f64]) -> SimplexPoint {
    SimplexPoint::normalized(g).expect("positive gamma draws")
}

/// Draw from Dirichlet(`alpha`) as normalized Gamma(`α_i`, rate `beta`)
/// variables.
pub fn sample_dirichlet_with_rate<R: Rng + ?Sized>(
    alpha: &[f64],
    beta: f64,
    rng: &mut R,
) -> Result<SimplexPoint, DirichletError> {
    check_alpha(alpha)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DirichletError::NonPositiveRate(beta));
    }
    let mut g = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let dist = Gamma::new(a, 1.0 / beta).map_err(|_| DirichletError::NonPositiveAlpha(alpha.to_vec()))?;
        // shapes far below one can underflow to zero
        g.push(dist.sample(rng).max(f64::MIN_POSITIVE));
    }
    Ok(dirichlet_from_gammas(&g))
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<SimplexPoint, DirichletError> {
    sample_dirichlet_with_rate(alpha, 1.0, rng)
}

/// Number of independent seed streams used by [`sample_dirichlet_many`].
pub const SAMPLING_CHUNKS: usize = 64;

/// `count` draws, split over [`SAMPLING_CHUNKS`] streams of `seed` and run
/// in parallel; the result does not depend on the thread count.
pub fn sample_dirichlet_many(alpha: &[f64], beta: f64, count: usize, seed: u64) -> Result<Vec<SimplexPoint>, DirichletError> {
    check_alpha(alpha)?;
    let chunks: Vec<Result<Vec<SimplexPoint>, DirichletError>> = (0..SAMPLING_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = c * count / SAMPLING_CHUNKS;
            let hi = (c + 1) * count / SAMPLING_CHUNKS;
            let mut rng = replicate_rng(seed, c as u64);
            (lo..hi).map(|_| sample_dirichlet_with_rate(alpha, beta, &mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// A sequence `n ↦ α^(n)` with `α^(n)/n → α`.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSequence {
    /// `α^(n) = n·y^(n) + 1`, limit `y`.
    Shifted(DirectionY),
    /// `α^(n) = n·α`, limit `α`.
    Linear(Vec<f64>),
}

impl AlphaSequence {
    pub fn shifted(y: Vec<f64>) -> Result<Self, DirichletError> {
        DirectionY::new(y.clone()).map(Self::Shifted).map_err(|_| DirichletError::NonPositiveAlpha(y))
    }

    pub fn linear(alpha: Vec<f64>) -> Result<Self, DirichletError> {
        check_alpha(&alpha)?;
        Ok(Self::Linear(alpha))
    }

    pub fn dim(&self) -> usize {
        self.limit().len()
    }

    pub fn at(&self, n: u64) -> Vec<f64> {
        match self {
            AlphaSequence::Shifted(dir) => dir.lattice(n).counts().iter().map(|&c| f64::from(c) + 1.0).collect(),
            AlphaSequence::Linear(a) => a.iter().map(|&v| n as f64 * v).collect(),
        }
    }

    pub fn limit(&self) -> Vec<f64> {
        match self {
            AlphaSequence::Shifted(dir) => dir.y().to_vec(),
            AlphaSequence::Linear(a) => a.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlphaSequence::Shifted(_) => "shifted",
            AlphaSequence::Linear(_) => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLimit {
    pub alpha: Vec<f64>,
    /// `Σ_ij = α_i (δ_ij ‖α‖ − α_j) / ‖α‖³`.
    pub sigma: DMatrix<f64>,
    /// Leading `(d−1) × (d−1)` block of `Σ`.
    pub reduced: DMatrix<f64>,
}

impl GaussianLimit {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn stddevs(&self) -> Vec<f64> {
        (0..self.reduced.nrows()).map(|k| self.reduced[(k, k)].sqrt()).collect()
    }
}

pub fn clt_covariance(alpha: &[f64]) -> Result<GaussianLimit, DirichletError> {
    check_alpha(alpha)?;
    let d = alpha.len();
    let norm: f64 = alpha.iter().sum();
    let sigma = DMatrix::from_fn(d, d, |i, j| {
        let delta = if i == j { norm } else { 0.0 };
        alpha[i] * (delta - alpha[j]) / norm.powi(3)
    });
    let reduced = sigma.view((0, 0), (d - 1, d - 1)).into_owned();
    Ok(GaussianLimit { alpha: alpha.to_vec(), sigma, reduced })
}

/// Density of `√n (D^(n) − α^(n)/‖α^(n)‖)` in its first `d − 1`
/// coordinates; zero outside the shifted and scaled simplex.
pub fn phi_n_density(u: &[f64], n: u64, seq: &AlphaSequence) -> f64 {
    let alpha = seq.at(n);
    phi_n_with_alpha(u, n, &alpha, ln_beta(&alpha))
}

fn phi_n_with_alpha(u: &[f64], n: u64, alpha: &[f64], ln_b: f64) -> f64 {
    let d = alpha.len();
    let norm: f64 = alpha.iter().sum();
    let scale = (n as f64).sqrt();
    let mut log = -(d as f64 - 1.0) / 2.0 * (n as f64).ln() - ln_b;
    let mut last = 1.0;
    for k in 0..d - 1 {
        let x = u[k] / scale + alpha[k] / norm;
        if !(x > 0.0 && x < 1.0) {
            return 0.0;
        }
        last -= x;
        log += (alpha[k] - 1.0) * x.ln();
    }
    if !(last > 0.0) {
        return 0.0;
    }
    log += (alpha[d - 1] - 1.0) * last.ln();
    log.exp()
}

/// Centered normal density with covariance `Σ_{d−1}(α)`.
pub fn gaussian_density(u: &[f64], lim: &GaussianLimit) -> Result<f64, DirichletError> {
    let q = lim.reduced.nrows();
    if u.len() != q {
        return Err(DirichletError::DimensionMismatch { expected: q, got: u.len() });
    }
    let chol = lim.reduced.clone().cholesky().ok_or(DirichletError::SingularCovariance)?;
    let v = nalgebra::DVector::from_column_slice(u);
    let w = chol.l().solve_lower_triangular(&v).ok_or(DirichletError::SingularCovariance)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    let log = -0.5 * w.norm_squared() - 0.5 * log_det - q as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
    Ok(log.exp())
}

/// Largest dimension for which tensor grids are built.
pub const MAX_GRID_DIM: usize = 3;

/// Tensor grid on the `(d−1)`-coordinate chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
    pub spacing: f64,
}

impl Grid {
    /// Spacing `0.05·min stddev`, extent `±6` stddevs of the limit on each axis.
    pub fn for_limit(lim: &GaussianLimit) -> Result<Self, DirichletError> {
        Self::with_resolution(lim, 0.05, 6.0)
    }

    pub fn with_resolution(lim: &GaussianLimit, step_sd: f64, extent_sd: f64) -> Result<Self, DirichletError> {
        if lim.dim() > MAX_GRID_DIM {
            return Err(DirichletError::GridTooLarge { d: lim.dim(), max: MAX_GRID_DIM });
        }
        let sds = lim.stddevs();
        let spacing = step_sd * sds.iter().copied().fold(f64::INFINITY, f64::min);
        let axes = sds
            .iter()
            .map(|&sd| {
                let half = (extent_sd * sd / spacing).ceil() as i64;
                (-half..=half).map(|k| k as f64 * spacing).collect()
            })
            .collect();
        Ok(Self { axes, spacing })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.axes.len() as i32)
    }

    /// Calls `f` on every grid point.
    pub fn for_each(&self, mut f: impl FnMut(&[f64])) {
        let q = self.axes.len();
        let mut idx = vec![0usize; q];
        let mut point: Vec<f64> = self.axes.iter().map(|a| a[0]).collect();
        loop {
            f(&point);
            let mut k = 0;
            loop {
                if k == q {
                    return;
                }
                idx[k] += 1;
                if idx[k] < self.axes[k].len() {
                    point[k] = self.axes[k][idx[k]];
                    break;
                }
                idx[k] = 0;
                point[k] = self.axes[k][0];
                k += 1;
            }
        }
    }

    /// Riemann sum of `f` over the grid.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each(|u| acc += f(u));
        acc * self.cell_volume()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupGap {
    pub gap: f64,
    pub argmax: Vec<f64>,
}

/// `max_grid |φ_n − φ|`.
pub fn sup_norm_gap(n: u64, seq: &AlphaSequence, grid: &Grid) -> Result<SupGap, DirichletError> {
    let lim = clt_covariance(&seq.limit())?;
    let alpha = seq.at(n);
    check_alpha(&alpha)?;
    let ln_b = ln_beta(&alpha);
    let mut best = SupGap { gap: -1.0, argmax: Vec::new() };
    let mut err = None;
    grid.for_each(|u| match gaussian_density(u, &lim) {
        Ok(g) => {
            let gap = (phi_n_with_alpha(u, n, &alpha, ln_b) - g).abs();
            if gap > best.gap {
                best = SupGap { gap, argmax: u.to_vec() };
            }
        }
        Err(e) => err = Some(e),
    });
    match err {
        Some(e) => Err(e),
        None => Ok(best),
    }
}

/// `‖φ_n‖_∞` from the Dirichlet mode `(α^(n) − 1)/(‖α^(n)‖ − d)`.
pub fn phi_n_sup(n: u64, seq: &AlphaSequence) -> Result<f64, DirichletError> {
    let alpha = seq.at(n);
    if let Some((index, &value)) = alpha.iter().enumerate().find(|(_, &a)| a <= 1.0) {
        return Err(DirichletError::ModeOnBoundary { index, value });
    }
    let d = alpha.len() as f64;
    let norm: f64 = alpha.iter().sum();
    let mode: Vec<f64> = alpha.iter().map(|a| (a - 1.0) / (norm - d)).collect();
    let x = SimplexPoint::normalized(&mode).expect("interior mode");
    let log = dirichlet_log_density(&x, &alpha).expect("valid parameters");
    Ok((log - (d - 1.0) / 2.0 * (n as f64).ln()).exp())
}

/// Limit of `‖φ_n‖_∞`: `((2π)^{d−1} Π(α_i/‖α‖) ‖α‖^{−(d−1)})^{−1/2}`.
pub fn phi_sup_limit(alpha: &[f64]) -> f64 {
    let d = alpha.len() as f64;
    let norm: f64 = alpha.iter().sum();
    let prod: f64 = alpha.iter().map(|a| a / norm).product();
    ((2.0 * std::f64::consts::PI).powf(d - 1.0) * prod * norm.powf(1.0 - d)).powf(-0.5)
}

/// `(det σ_{d−1}(x), Π x_i)`.
pub fn check_determinant_identity(x: &SimplexPoint) -> (f64, f64) {
    (reduced_diffusion_matrix(x).determinant(), x.coords().iter().product())
}

/// Second moment matrix of `√n (D − center)` over the samples.
pub fn scaled_covariance(samples: &[SimplexPoint], center: &[f64], n: u64) -> DMatrix<f64> {
    let d = center.len();
    let mut c = DMatrix::zeros(d, d);
    for s in samples {
        let v: Vec<f64> = s.coords().iter().zip(center).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += v[i] * v[j];
            }
        }
    }
    c * (n as f64 / samples.len() as f64)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Rejection threshold of the two-sample KS test at level 1%.
pub fn ks_threshold(na: usize, nb: usize) -> f64 {
    1.628 * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}
