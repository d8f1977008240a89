//! Closed forms for neutral parent-independent mutation (`P_ij = Q_j`, `γ = 0`).
//!
//! The stationary law of the diffusion is Dirichlet(`θQ`), so
//! `p(n) = (‖n‖ choose n) · B(n + θQ) / B(θQ)` and
//! `π[i|n] = (n_i + θQ_i) / (‖n‖ + θ)`.

use thiserror::Error;

use crate::lattice::{size_of, SampleConfig};
use crate::params::{ModelParams, ValidationReport};
use crate::simplex::{DirectionY, SimplexPoint};
use crate::special::{ln_beta, ln_gamma, log_multinomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PimError {
    #[error("theta must be positive, got {0}")]
    NonPositiveTheta(f64),
    #[error("Q must be strictly positive and sum to 1, got {0:?}")]
    BadQ(Vec<f64>),
    #[error("parameters are not neutral parent-independent mutation")]
    NotPim,
    #[error("Dirichlet parameters must be positive, got {0:?}")]
    BadAlpha(Vec<f64>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density is infinite at boundary coordinate {index}")]
    BoundaryPoint { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PimParams {
    theta: f64,
    q: Vec<f64>,
}

impl PimParams {
    pub fn new(theta: f64, q: Vec<f64>) -> Result<Self, PimError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(PimError::NonPositiveTheta(theta));
        }
        let sum: f64 = q.iter().sum();
        if q.len() < 2 || q.iter().any(|&v| !(v > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(PimError::BadQ(q));
        }
        Ok(Self { theta, q })
    }

    /// Extracts `θ, Q` from neutral PIM model parameters.
    pub fn from_model(params: &ModelParams) -> Result<Self, PimError> {
        match params.pim_q() {
            Some(q) if params.is_neutral() => Self::new(params.theta(), q.to_vec()),
            _ => Err(PimError::NotPim),
        }
    }

    pub fn to_model(&self) -> Result<ModelParams, ValidationReport> {
        ModelParams::pim(self.theta, &self.q)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Dirichlet parameters `θQ` of the stationary density.
    pub fn alpha(&self) -> Vec<f64> {
        self.q.iter().map(|&qi| self.theta * qi).collect()
    }
}

/// `log p(n)` for neutral PIM.
pub fn pim_log_p(n: &SampleConfig, pp: &PimParams) -> f64 {
    let alpha = pp.alpha();
    let shifted: Vec<f64> = n.counts().iter().zip(&alpha).map(|(&c, a)| f64::from(c) + a).collect();
    log_multinomial(n.counts()) + ln_beta(&shifted) - ln_beta(&alpha)
}

/// `π[i|n] = (n_i + θQ_i)/(‖n‖ + θ)`; `counts` may be the empty sample.
pub fn pim_pi(i: usize, counts: &[u32], pp: &PimParams) -> f64 {
    (f64::from(counts[i]) + pp.theta * pp.q[i]) / (size_of(counts) as f64 + pp.theta)
}

/// Log of the Dirichlet(`a`) density of the first `d − 1` coordinates.
///
/// A zero coordinate yields `-inf` when `a_i > 1`, a finite value when
/// `a_i = 1` and [`PimError::BoundaryPoint`] when `a_i < 1`.
pub fn dirichlet_log_density(x: &SimplexPoint, a: &[f64]) -> Result<f64, PimError> {
    if a.len() != x.dim() {
        return Err(PimError::DimensionMismatch { expected: a.len(), got: x.dim() });
    }
    if a.iter().any(|&ai| !(ai > 0.0)) {
        return Err(PimError::BadAlpha(a.to_vec()));
    }
    let mut acc = -ln_beta(a);
    for (index, (&xi, &ai)) in x.coords().iter().zip(a).enumerate() {
        if xi == 0.0 {
            if ai < 1.0 {
                return Err(PimError::BoundaryPoint { index });
            }
            if ai > 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            continue;
        }
        acc += (ai - 1.0) * xi.ln();
    }
    Ok(acc)
}

/// `log` of `n^{1−d} ‖y‖^{1−d} Dir_{θQ}(y/‖y‖)`, the large-sample form of
/// `log p(n·y^(n))`.
pub fn pim_asymptotic_log_p(n: u64, dir: &DirectionY, pp: &PimParams) -> f64 {
    let d = dir.dim() as f64;
    let density = dirichlet_log_density(&dir.direction(), &pp.alpha())
        .expect("interior direction has finite density");
    (1.0 - d) * (n as f64).ln() + (1.0 - d) * dir.norm().ln() + density
}

/// The three successive approximations of `p(n·y^(n))` obtained from
/// Stirling's formula, in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StirlingStages {
    pub exact: f64,
    /// Stirling's formula applied to every Gamma factor.
    pub stage1: f64,
    /// Stage 1 regrouped into `(1 + c/(m+a))^{m+1/2} (m+a)^{..} e^{..}` factors.
    pub stage2: f64,
    /// `n^{1−d} ‖y‖^{1−d} B(θQ)^{-1} Π (y_i/‖y‖)^{θQ_i − 1}`.
    pub stage3: f64,
}

pub fn stirling_stages(n: u64, dir: &DirectionY, pp: &PimParams) -> StirlingStages {
    let theta = pp.theta;
    let alpha = pp.alpha();
    let lattice = dir.lattice(n);
    let exact = pim_log_p(&lattice, pp);
    let counts: Vec<f64> = lattice.counts().iter().map(|&c| f64::from(c)).collect();
    let total: f64 = counts.iter().sum();
    let ln_b = ln_beta(&alpha);

    // z^{z-1/2} e^{-z}, the √(2π) factors cancel between numerator and denominator
    let stirling = |z: f64| (z - 0.5) * z.ln() - z;
    let mut stage1 = -ln_b + stirling(total + 1.0) - stirling(total + theta);
    for (&ni, &ai) in counts.iter().zip(&alpha) {
        stage1 += stirling(ni + ai) - stirling(ni + 1.0);
    }

    let mut stage2 = -ln_b
        + (total + 0.5) * (1.0 + (1.0 - theta) / (total + theta)).ln()
        + (1.0 - theta) * (total + theta).ln()
        + (theta - 1.0);
    for (&ni, &ai) in counts.iter().zip(&alpha) {
        stage2 += (ni + 0.5) * (1.0 + (ai - 1.0) / (ni + ai)).ln()
            + (ai - 1.0) * (ni + ai).ln()
            + (1.0 - ai);
    }

    let stage3 = pim_asymptotic_log_p(n, dir, pp);
    StirlingStages { exact, stage1, stage2, stage3 }
}

/// `ln Γ(m + 1) − ln Γ(m + d)`; with `+ (d − 1) ln n` this tends to `(1 − d) ln ‖y‖`.
pub fn log_multinomial_beta_factor(lattice: &SampleConfig) -> f64 {
    let m = lattice.size() as f64;
    let d = lattice.dim() as f64;
    ln_gamma(m + 1.0) - ln_gamma(m + d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform2() -> PimParams {
        PimParams::new(2.0, vec![0.5, 0.5]).unwrap()
    }

    fn cfg(c: &[u32]) -> SampleConfig {
        SampleConfig::new(c.to_vec()).unwrap()
    }

    #[test]
    fn uniform_case_is_one_over_size_plus_one() {
        let lp = pim_log_p(&cfg(&[3, 2]), &uniform2());
        assert!((lp - (1.0f64 / 6.0).ln()).abs() < 1e-13);
    }

    #[test]
    fn single_lineage_is_q() {
        let pp = PimParams::new(1.0, vec![0.6, 0.4]).unwrap();
        assert!((pim_log_p(&cfg(&[1, 0]), &pp) - 0.6f64.ln()).abs() < 1e-14);
        let pp = PimParams::new(0.7, vec![0.2, 0.3, 0.5]).unwrap();
        let total: f64 = (0..3).map(|i| pim_log_p(&SampleConfig::unit(3, i), &pp).exp()).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pi_values() {
        let pp = uniform2();
        assert_eq!(pim_pi(0, &[1, 1], &pp), 0.5);
        assert_eq!(pim_pi(0, &[2, 0], &pp), 0.75);
        let pp = PimParams::new(1.3, vec![0.2, 0.3, 0.5]).unwrap();
        for i in 0..3 {
            assert!((pim_pi(i, &[0, 0, 0], &pp) - pp.q()[i]).abs() < 1e-15);
        }
        let s: f64 = (0..3).map(|i| pim_pi(i, &[4, 0, 7], &pp)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_density_values() {
        let x = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        assert!(dirichlet_log_density(&x, &[1.0, 1.0]).unwrap().abs() < 1e-15);
        let half = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert!((dirichlet_log_density(&half, &[2.0, 2.0]).unwrap() - 1.5f64.ln()).abs() < 1e-14);
        let x3 = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!((dirichlet_log_density(&x3, &[1.0; 3]).unwrap() - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_density_boundary_rules() {
        let corner = SimplexPoint::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(
            dirichlet_log_density(&corner, &[0.5, 2.0]),
            Err(PimError::BoundaryPoint { index: 0 })
        );
        assert_eq!(dirichlet_log_density(&corner, &[2.0, 2.0]), Ok(f64::NEG_INFINITY));
        assert!(dirichlet_log_density(&corner, &[1.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn dirichlet_density_integrates_to_one() {
        // midpoint rule on the chart
        let a2 = [1.7, 2.4];
        let k = 4000;
        let h = 1.0 / k as f64;
        let total: f64 = (0..k)
            .map(|t| {
                let u = (t as f64 + 0.5) * h;
                let x = SimplexPoint::new(vec![u, 1.0 - u]).unwrap();
                dirichlet_log_density(&x, &a2).unwrap().exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");

        let a3 = [2.0, 1.5, 3.0];
        let k = 600;
        let h = 1.0 / k as f64;
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                let (u, v) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if u + v < 1.0 {
                    let x = SimplexPoint::new(vec![u, v, 1.0 - u - v]).unwrap();
                    total += dirichlet_log_density(&x, &a3).unwrap().exp() * h * h;
                }
            }
        }
        assert!((total - 1.0).abs() < 5e-3, "{total}");
    }

    #[test]
    fn asymptotic_form() {
        let pp = uniform2();
        let y = DirectionY::new(vec![0.5, 0.5]).unwrap();
        assert!((pim_asymptotic_log_p(100, &y, &pp) + 100f64.ln()).abs() < 1e-13);
        let y11 = DirectionY::new(vec![1.0, 1.0]).unwrap();
        assert!((pim_asymptotic_log_p(1, &y11, &pp) + 2f64.ln()).abs() < 1e-14);

        let pp3 = PimParams::new(3.0, vec![1.0 / 3.0; 3]).unwrap();
        let y3 = DirectionY::new(vec![1.0 / 3.0; 3]).unwrap();
        let ratio = (pim_log_p(&y3.lattice(3000), &pp3) - pim_asymptotic_log_p(3000, &y3, &pp3)).exp();
        assert!((0.99..=1.01).contains(&ratio), "{ratio}");
    }

    #[test]
    fn stirling_chain_converges() {
        let pp = PimParams::new(1.5, vec![0.2, 0.3, 0.5]).unwrap();
        let y = DirectionY::new(vec![1.0, 2.0, 0.5]).unwrap();
        let s = stirling_stages(10_000, &y, &pp);
        assert!((s.stage1 - s.exact).abs() < 1e-3);
        assert!((s.stage2 - s.stage1).abs() < 1e-3);
        assert!((s.stage3 - s.stage2).abs() < 1e-3);
        assert_eq!(s.stage3, pim_asymptotic_log_p(10_000, &y, &pp));
    }

    #[test]
    fn from_model_requires_neutral_pim() {
        let m = ModelParams::pim(2.0, &[0.5, 0.5]).unwrap();
        assert_eq!(PimParams::from_model(&m).unwrap(), uniform2());
        let m = ModelParams::new(2, 1.0, vec![0.9, 0.1, 0.2, 0.8], vec![0.0, 0.0]).unwrap();
        assert_eq!(PimParams::from_model(&m), Err(PimError::NotPim));
    }
}
