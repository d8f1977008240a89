//! Wright–Fisher diffusion: drift, diffusion matrix, Euler–Maruyama sampling
//! of the stationary law and Monte Carlo estimators built on it.
//!
//! The process is integrated on the chart `u = (x_1, …, x_{d−1})` as
//! `du = ½ μ(x) dt + σ_{d−1}(x)^{1/2} dW`, which is the time scale on which
//! the neutral parent-independent stationary law is Dirichlet(`θQ`) and on
//! which moments `E[X^n]` satisfy the normalization identity of the jump
//! chain. [`drift`] returns `μ` itself.
//!
//! Near a face the diffusion coefficient vanishes like `√x_i`. Clamping the
//! propagated state there adds mass at every overshoot, so by default the
//! state is propagated unconstrained and only the copy feeding `σ^{1/2}` and
//! the recorded samples is clamped and renormalized. This keeps the linear
//! part of the moment dynamics exact.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

use crate::lattice::SampleConfig;
use crate::output::{fmt_f64, provenance_line};
use crate::params::ModelParams;
use crate::simplex::SimplexPoint;
use crate::special::log_multinomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid diffusion configuration: {0}")]
    BadConfig(String),
    #[error("replica {replica} reached a non-finite state at t = {time}")]
    NonFiniteState { replica: usize, time: f64 },
    #[error("ensemble has no samples")]
    EmptyEnsemble,
    #[error("dimension mismatch: ensemble has d = {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point is within {margin} of the simplex boundary (coordinate {index} = {value})")]
    TooCloseToBoundary { index: usize, value: f64, margin: f64 },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
}

/// How Euler–Maruyama steps that leave the simplex are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryScheme {
    /// Propagate the unconstrained state; clamp and renormalize only the
    /// copy used for the diffusion coefficient and for recorded samples.
    #[default]
    Truncate,
    /// Clamp the propagated state to `[ε_b, 1 − ε_b]` and renormalize after
    /// every step.
    Clamp,
}

impl BoundaryScheme {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryScheme::Truncate => "truncate",
            BoundaryScheme::Clamp => "clamp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub dt: f64,
    pub burn_in: f64,
    pub thinning: f64,
    pub boundary_eps: f64,
    pub boundary: BoundaryScheme,
    pub replicas: usize,
    /// Total number of retained samples, split evenly over replicas.
    pub samples: usize,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { dt: 1e-3, burn_in: 50.0, thinning: 1.0, boundary_eps: 1e-9, boundary: BoundaryScheme::Truncate, replicas: 50, samples: 10_000, seed: 0 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self, d: usize) -> Result<(), DiffusionError> {
        let bad = |m: String| Err(DiffusionError::BadConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.thinning >= self.dt) {
            return bad(format!("thinning {} must be at least dt {}", self.thinning, self.dt));
        }
        if !(self.burn_in >= 0.0) {
            return bad(format!("burn-in must be non-negative, got {}", self.burn_in));
        }
        if !(self.boundary_eps > 0.0 && self.boundary_eps < 1.0 / d as f64) {
            return bad(format!("boundary clamp must lie in (0, 1/d), got {}", self.boundary_eps));
        }
        if self.replicas == 0 || self.samples < self.replicas {
            return bad(format!("need at least one sample per replica ({} samples, {} replicas)", self.samples, self.replicas));
        }
        Ok(())
    }

    fn steps(&self, time: f64) -> u64 {
        (time / self.dt).round() as u64
    }

    fn replica_samples(&self, r: usize) -> usize {
        self.samples / self.replicas + usize::from(r < self.samples % self.replicas)
    }
}

/// `μ_i(x) = θ Σ_j x_j P_ji − θ x_i + x_i (γ_i − Σ_j γ_j x_j)`.
pub fn drift(x: &SimplexPoint, params: &ModelParams) -> Vec<f64> {
    let mut mu = vec![0.0; x.dim()];
    drift_into(x.coords(), params, &mut mu);
    mu
}

fn drift_into(x: &[f64], params: &ModelParams, mu: &mut [f64]) {
    let d = x.len();
    let theta = params.theta();
    let gamma = params.gamma();
    let mean_gamma: f64 = x.iter().zip(gamma).map(|(a, g)| a * g).sum();
    for i in 0..d {
        let inflow: f64 = (0..d).map(|j| x[j] * params.p(j, i)).sum();
        mu[i] = theta * (inflow - x[i]) + x[i] * (gamma[i] - mean_gamma);
    }
}

/// `σ_ij(x) = x_i (δ_ij − x_j)`.
pub fn diffusion_matrix(x: &SimplexPoint) -> DMatrix<f64> {
    let c = x.coords();
    DMatrix::from_fn(c.len(), c.len(), |i, j| c[i] * (f64::from(u8::from(i == j)) - c[j]))
}

/// Leading `(d−1) × (d−1)` block of [`diffusion_matrix`].
pub fn reduced_diffusion_matrix(x: &SimplexPoint) -> DMatrix<f64> {
    let c = x.chart();
    DMatrix::from_fn(c.len(), c.len(), |i, j| c[i] * (f64::from(u8::from(i == j)) - c[j]))
}

/// Symmetric PSD square root from the eigendecomposition, eigenvalues
/// floored at zero.
pub fn spectral_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Writes the spectral root of `σ_{d−1}(x)` into `root` (row-major `q × q`).
fn chart_root(x: &[f64], root: &mut [f64]) {
    let q = x.len() - 1;
    match q {
        1 => root[0] = (x[0] * (1.0 - x[0])).max(0.0).sqrt(),
        2 => {
            // √A = (A + √det I) / √(tr + 2√det) for 2×2 PSD A
            let (a, b, c) = (x[0] * (1.0 - x[0]), -x[0] * x[1], x[1] * (1.0 - x[1]));
            let s = (a * c - b * b).max(0.0).sqrt();
            let t = (a + c + 2.0 * s).max(0.0).sqrt();
            if t > 0.0 {
                root.copy_from_slice(&[(a + s) / t, b / t, b / t, (c + s) / t]);
            } else {
                root.fill(0.0);
            }
        }
        _ => {
            let sigma = DMatrix::from_fn(q, q, |i, j| x[i] * (f64::from(u8::from(i == j)) - x[j]));
            let s = spectral_sqrt(&sigma);
            for i in 0..q {
                for j in 0..q {
                    root[i * q + j] = s[(i, j)];
                }
            }
        }
    }
}

struct Stepper<'a> {
    params: &'a ModelParams,
    dt: f64,
    sqrt_dt: f64,
    eps: f64,
    scheme: BoundaryScheme,
    mu: Vec<f64>,
    root: Vec<f64>,
    z: Vec<f64>,
    /// Clamped, renormalized copy of the state.
    proj: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a ModelParams, cfg: &DiffusionConfig) -> Self {
        let d = params.dim();
        Self {
            params,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            eps: cfg.boundary_eps,
            scheme: cfg.boundary,
            mu: vec![0.0; d],
            root: vec![0.0; (d - 1) * (d - 1)],
            z: vec![0.0; d - 1],
            proj: vec![0.0; d],
        }
    }

    fn project(&mut self, x: &[f64]) -> bool {
        let mut total = 0.0;
        for (p, &v) in self.proj.iter_mut().zip(x) {
            *p = v.clamp(self.eps, 1.0 - self.eps);
            total += *p;
        }
        if !total.is_finite() {
            return false;
        }
        self.proj.iter_mut().for_each(|p| *p /= total);
        true
    }

    /// One Euler–Maruyama step. Returns `false` on a non-finite state.
    fn step<R: Rng>(&mut self, x: &mut [f64], rng: &mut R) -> bool {
        let d = x.len();
        let q = d - 1;
        drift_into(x, self.params, &mut self.mu);
        debug_assert!(self.mu.iter().sum::<f64>().abs() < 1e-12, "drift not tangent");
        if !self.project(x) {
            return false;
        }
        chart_root(&self.proj, &mut self.root);
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let mut chart_sum = 0.0;
        for k in 0..q {
            let noise: f64 = (0..q).map(|l| self.root[k * q + l] * self.z[l]).sum();
            x[k] += 0.5 * self.mu[k] * self.dt + self.sqrt_dt * noise;
            chart_sum += x[k];
        }
        x[q] = 1.0 - chart_sum;
        if !chart_sum.is_finite() {
            return false;
        }
        if self.scheme == BoundaryScheme::Clamp {
            if !self.project(x) {
                return false;
            }
            x.copy_from_slice(&self.proj);
        }
        true
    }

    /// The recorded sample for state `x`.
    fn sample(&mut self, x: &[f64]) -> &[f64] {
        self.project(x);
        &self.proj
    }
}

/// One replica's retained samples, coordinates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub index: usize,
    pub times: Vec<f64>,
    pub coords: Vec<f64>,
}

impl ReplicaRun {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StationaryEnsemble {
    d: usize,
    pub config: DiffusionConfig,
    pub params_hash: String,
    pub replicas: Vec<ReplicaRun>,
    /// Replicas aborted on a non-finite state.
    pub failures: Vec<DiffusionError>,
}

impl StationaryEnsemble {
    /// Ensemble from externally produced points, one replica per chunk.
    pub fn from_points(d: usize, chunks: Vec<Vec<Vec<f64>>>) -> Self {
        let replicas = chunks
            .into_iter()
            .enumerate()
            .map(|(index, pts)| ReplicaRun {
                index,
                times: (0..pts.len()).map(|k| k as f64).collect(),
                coords: pts.into_iter().flatten().collect(),
            })
            .collect();
        Self { d, config: DiffusionConfig::default(), params_hash: String::new(), replicas, failures: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.replicas.iter().map(ReplicaRun::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All sample coordinates in replica order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.replicas.iter().flat_map(move |r| r.coords.chunks_exact(self.d))
    }

    pub fn samples(&self) -> Vec<SimplexPoint> {
        self.points().map(|p| SimplexPoint::normalized(p).expect("ensemble points lie on the simplex")).collect()
    }

    /// CSV with columns `replica,time,x_1..x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# {}", provenance_line("diffusion-ensemble", &self.params_hash, Some(self.config.seed)))?;
        let cols: Vec<String> = (1..=self.d).map(|i| format!("x_{i}")).collect();
        writeln!(w, "replica,time,{}", cols.join(","))?;
        for r in &self.replicas {
            for (t, x) in r.times.iter().zip(r.coords.chunks_exact(self.d)) {
                let xs: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
                writeln!(w, "{},{},{}", r.index, fmt_f64(*t), xs.join(","))?;
            }
        }
        Ok(())
    }
}

fn run_replica(params: &ModelParams, cfg: &DiffusionConfig, index: usize) -> Result<ReplicaRun, DiffusionError> {
    let d = params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut stepper = Stepper::new(params, cfg);
    // start at the invariant law of the mutation matrix, kept off the faces
    let mut x: Vec<f64> = params.mutation_stationary().iter().map(|&v| v.max(1e-3)).collect();
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);

    let burn = cfg.steps(cfg.burn_in);
    let thin = cfg.steps(cfg.thinning).max(1);
    let wanted = cfg.replica_samples(index);
    let mut run = ReplicaRun { index, times: Vec::with_capacity(wanted), coords: Vec::with_capacity(wanted * d) };
    let mut k: u64 = 0;
    let fail = |k: u64| DiffusionError::NonFiniteState { replica: index, time: k as f64 * cfg.dt };
    for _ in 0..burn {
        k += 1;
        if !stepper.step(&mut x, &mut rng) {
            return Err(fail(k));
        }
    }
    while run.len() < wanted {
        for _ in 0..thin {
            k += 1;
            if !stepper.step(&mut x, &mut rng) {
                return Err(fail(k));
            }
        }
        run.times.push(k as f64 * cfg.dt);
        run.coords.extend_from_slice(stepper.sample(&x));
    }
    Ok(run)
}

/// Runs `cfg.replicas` independent chains in parallel. Each replica uses
/// its own ChaCha stream of `cfg.seed`, so output does not depend on the
/// number of worker threads.
pub fn stationary_sample(params: &ModelParams, cfg: &DiffusionConfig) -> Result<StationaryEnsemble, DiffusionError> {
    let d = params.dim();
    cfg.validate(d)?;
    let results: Vec<Result<ReplicaRun, DiffusionError>> =
        (0..cfg.replicas).into_par_iter().map(|r| run_replica(params, cfg, r)).collect();
    let mut replicas = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => replicas.push(run),
            Err(e) => failures.push(e),
        }
    }
    if replicas.is_empty() {
        return Err(failures.into_iter().next().unwrap_or(DiffusionError::EmptyEnsemble));
    }
    Ok(StationaryEnsemble { d, config: cfg.clone(), params_hash: params.hash_hex(), replicas, failures })
}

/// Mean with a jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Minimum number of jackknife blocks; replicas are split into contiguous
/// batches when there are fewer.
const MIN_BLOCKS: usize = 20;

/// Sample mean of `f` with a delete-one-block jackknife error, blocks being
/// replicas (or contiguous batches within them).
pub fn ensemble_mean(ens: &StationaryEnsemble, f: impl Fn(&[f64]) -> f64) -> Result<McEstimate, DiffusionError> {
    if ens.is_empty() {
        return Err(DiffusionError::EmptyEnsemble);
    }
    let d = ens.dim();
    let per_replica = MIN_BLOCKS.div_ceil(ens.replicas.len());
    let mut blocks: Vec<(f64, f64)> = Vec::new();
    for r in &ens.replicas {
        let n = r.len();
        let parts = per_replica.min(n.max(1));
        for b in 0..parts {
            let (lo, hi) = (b * n / parts, (b + 1) * n / parts);
            let sum: f64 = r.coords[lo * d..hi * d].chunks_exact(d).map(&f).sum();
            blocks.push((sum, (hi - lo) as f64));
        }
    }
    let (total, count) = blocks.iter().fold((0.0, 0.0), |(s, c), &(bs, bc)| (s + bs, c + bc));
    let value = total / count;
    let g = blocks.len() as f64;
    let se = if blocks.len() < 2 {
        f64::NAN
    } else {
        let loo: Vec<f64> = blocks
            .iter()
            .filter(|&&(_, c)| c < count)
            .map(|&(s, c)| (total - s) / (count - c))
            .collect();
        let mean = loo.iter().sum::<f64>() / loo.len() as f64;
        ((g - 1.0) / g * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    };
    Ok(McEstimate { value, se })
}

fn monomial(n: &[u32]) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| x.iter().zip(n).map(|(&xi, &ni)| xi.powi(ni as i32)).product()
}

/// `k(n) = E[Π X_i^{n_i}]` under the stationary law; `k(0) = 1` exactly.
pub fn estimate_k(n: &[u32], ens: &StationaryEnsemble) -> Result<McEstimate, DiffusionError> {
    if ens.is_empty() {
        return Err(DiffusionError::EmptyEnsemble);
    }
    if n.len() != ens.dim() {
        return Err(DiffusionError::DimensionMismatch { expected: ens.dim(), got: n.len() });
    }
    if n.iter().all(|&c| c == 0) {
        return Ok(McEstimate { value: 1.0, se: 0.0 });
    }
    ensemble_mean(ens, monomial(n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPEstimate {
    pub log_p: f64,
    /// Standard error of `log p` by the delta method.
    pub se: f64,
    /// Relative standard error of `k` exceeds one half.
    pub high_variance: bool,
}

/// Relative standard error of `k` above which an estimate is flagged.
pub const HIGH_VARIANCE_RATIO: f64 = 0.5;

/// `log p(n) = log (‖n‖ choose n) + log k(n)`.
pub fn estimate_log_p(n: &SampleConfig, ens: &StationaryEnsemble) -> Result<LogPEstimate, DiffusionError> {
    let k = estimate_k(n.counts(), ens)?;
    let rel = k.se / k.value;
    Ok(LogPEstimate {
        log_p: log_multinomial(n.counts()) + k.value.ln(),
        se: rel,
        high_variance: !(rel <= HIGH_VARIANCE_RATIO),
    })
}

/// Gaussian kernel density estimate of the stationary density on the
/// `(d−1)`-coordinate chart, with reflections across the simplex faces.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    q: usize,
    bandwidth: f64,
    n: usize,
    /// Chart points and reflections, sorted by first coordinate.
    points: Vec<f64>,
}

impl DensityEstimate {
    pub fn new(ens: &StationaryEnsemble, bandwidth: Option<f64>) -> Result<Self, DiffusionError> {
        if ens.is_empty() {
            return Err(DiffusionError::EmptyEnsemble);
        }
        let d = ens.dim();
        let q = d - 1;
        let n = ens.len();
        let bandwidth = match bandwidth {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(DiffusionError::BadBandwidth(h)),
            None => scott_bandwidth(ens),
        };
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n * d);
        for x in ens.points() {
            let u = &x[..q];
            pts.push(u.to_vec());
            for k in 0..q {
                let mut r = u.to_vec();
                r[k] = -r[k];
                pts.push(r);
            }
            // reflection across the face Σ u = 1
            let s: f64 = u.iter().sum();
            match q {
                1 => pts.push(vec![2.0 - u[0]]),
                2 => pts.push(vec![1.0 - u[1], 1.0 - u[0]]),
                _ => {
                    let shift = 2.0 * (s - 1.0) / q as f64;
                    pts.push(u.iter().map(|v| v - shift).collect());
                }
            }
        }
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        Ok(Self { q, bandwidth, n, points: pts.into_iter().flatten().collect() })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density at `x`, which must be at least one bandwidth from every face.
    pub fn evaluate(&self, x: &SimplexPoint) -> Result<f64, DiffusionError> {
        if x.dim() != self.q + 1 {
            return Err(DiffusionError::DimensionMismatch { expected: self.q + 1, got: x.dim() });
        }
        if let Some((index, &value)) = x.coords().iter().enumerate().find(|(_, &v)| v < self.bandwidth) {
            return Err(DiffusionError::TooCloseToBoundary { index, value, margin: self.bandwidth });
        }
        Ok(self.evaluate_raw(x.chart()))
    }

    /// Density at chart coordinates without the boundary check.
    pub fn evaluate_raw(&self, u: &[f64]) -> f64 {
        let q = self.q;
        let h = self.bandwidth;
        let cutoff = 8.0 * h;
        let count = self.points.len() / q;
        let first = |k: usize| self.points[k * q];
        let lo = partition(count, |k| first(k) < u[0] - cutoff);
        let mut acc = 0.0;
        for k in lo..count {
            if first(k) > u[0] + cutoff {
                break;
            }
            let p = &self.points[k * q..(k + 1) * q];
            let r2: f64 = p.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += (-0.5 * r2 / (h * h)).exp();
        }
        let norm = (2.0 * std::f64::consts::PI).powf(q as f64 / 2.0) * h.powi(q as i32);
        acc / (self.n as f64 * norm)
    }
}

/// First index in `0..n` where `pred` fails; `pred` must be monotone.
fn partition(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Scott's rule `σ̄ n^{−1/(q+4)}` with `σ̄` the mean chart standard deviation.
pub fn scott_bandwidth(ens: &StationaryEnsemble) -> f64 {
    let q = ens.dim() - 1;
    let n = ens.len() as f64;
    let mut mean = vec![0.0; q];
    let mut sq = vec![0.0; q];
    for x in ens.points() {
        for k in 0..q {
            mean[k] += x[k];
            sq[k] += x[k] * x[k];
        }
    }
    let sd: f64 = (0..q).map(|k| (sq[k] / n - (mean[k] / n).powi(2)).max(0.0).sqrt()).sum::<f64>() / q as f64;
    sd * n.powf(-1.0 / (q as f64 + 4.0))
}

/// Kernel estimate of the stationary density at `at`.
pub fn estimate_density(ens: &StationaryEnsemble, at: &SimplexPoint, bandwidth: f64) -> Result<f64, DiffusionError> {
    DensityEstimate::new(ens, Some(bandwidth))?.evaluate(at)
}
