//! Convergence checks for the large-sample limits of `p`, `k`, `π` and the
//! scaled transition probabilities.

use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chain::{transition_distribution, ChainError, Event, PiProvider};
use crate::diffusion::{estimate_log_p, DensityEstimate, DiffusionError, StationaryEnsemble};
use crate::dirichlet::{sample_dirichlet_many, DirichletError};
use crate::lattice::SampleConfig;
use crate::output::{fmt_f64, provenance_line};
use crate::params::ModelParams;
use crate::pim::{dirichlet_log_density, pim_log_p, stirling_stages, PimError, PimParams};
use crate::simplex::{DirectionY, SimplexPoint};
use crate::special::{ln_beta, log_multinomial};
use crate::table::ProbTable;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("n = {n} is infeasible: {reason}")]
    InfeasibleN { n: u64, reason: String },
    #[error("grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Pim(#[from] PimError),
}

/// Largest sample size for which Monte Carlo `p` estimates are used.
pub const MC_MAX_SIZE: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub quantity: String,
    pub n_grid: Vec<u64>,
    pub observed: Vec<f64>,
    /// Standard errors of `observed`, for Monte Carlo sources.
    pub se: Option<Vec<f64>>,
    pub target: f64,
    pub abs_err: Vec<f64>,
    pub rel_err: Vec<f64>,
    pub tolerance: f64,
    pub monotone_tail: bool,
    pub pass: bool,
    pub provenance: String,
}

impl ConvergenceReport {
    pub fn new(
        quantity: impl Into<String>,
        n_grid: Vec<u64>,
        observed: Vec<f64>,
        target: f64,
        tolerance: f64,
        provenance: impl Into<String>,
    ) -> Result<Self, AsymptoticsError> {
        if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid.len() != observed.len() {
            return Err(AsymptoticsError::BadGrid);
        }
        let abs_err: Vec<f64> = observed.iter().map(|o| (o - target).abs()).collect();
        let rel_err: Vec<f64> = abs_err.iter().map(|e| if target != 0.0 { e / target.abs() } else { f64::NAN }).collect();
        let mut r = Self {
            quantity: quantity.into(),
            n_grid,
            observed,
            se: None,
            target,
            abs_err,
            rel_err,
            tolerance,
            monotone_tail: false,
            pass: false,
            provenance: provenance.into(),
        };
        r.judge();
        Ok(r)
    }

    pub fn with_se(mut self, se: Vec<f64>) -> Self {
        self.se = Some(se);
        self
    }

    /// Relative error when the target is nonzero, absolute otherwise.
    pub fn errors(&self) -> &[f64] {
        if self.target != 0.0 {
            &self.rel_err
        } else {
            &self.abs_err
        }
    }

    pub fn final_error(&self) -> f64 {
        *self.errors().last().expect("non-empty grid")
    }

    fn judge(&mut self) {
        let e = self.errors();
        let tail = &e[e.len().saturating_sub(3)..];
        self.monotone_tail = tail.windows(2).all(|w| w[1] <= w[0]);
        self.pass = self.final_error() <= self.tolerance && self.monotone_tail;
    }

    /// Errors strictly decrease along the whole grid.
    pub fn strictly_decreasing(&self) -> bool {
        self.errors().windows(2).all(|w| w[1] < w[0])
    }

    /// CSV with columns `n,observed,target,abs_err,rel_err[,se]`.
    pub fn write_csv<W: Write>(&self, mut w: W, params_hash: &str, seed: Option<u64>) -> io::Result<()> {
        writeln!(w, "# {} quantity={} provenance={}", provenance_line("asymptotics", params_hash, seed), self.quantity, self.provenance)?;
        let se_col = if self.se.is_some() { ",se" } else { "" };
        writeln!(w, "n,observed,target,abs_err,rel_err{se_col}")?;
        for k in 0..self.n_grid.len() {
            write!(
                w,
                "{},{},{},{},{}",
                self.n_grid[k],
                fmt_f64(self.observed[k]),
                fmt_f64(self.target),
                fmt_f64(self.abs_err[k]),
                fmt_f64(self.rel_err[k])
            )?;
            if let Some(se) = &self.se {
                write!(w, ",{}", fmt_f64(se[k]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn verdict_json(&self) -> serde_json::Value {
        serde_json::json!({
            "quantity": self.quantity,
            "pass": self.pass,
            "final_error": self.final_error(),
            "tolerance": self.tolerance,
            "monotone_tail": self.monotone_tail,
            "provenance": self.provenance,
        })
    }
}

/// Where `p(n)` comes from.
#[derive(Clone)]
pub enum PSource {
    Pim(PimParams),
    Table(Arc<ProbTable>),
    Mc(Arc<StationaryEnsemble>),
}

impl PSource {
    pub fn name(&self) -> &'static str {
        match self {
            PSource::Pim(_) => "pim-exact",
            PSource::Table(_) => "recursion",
            PSource::Mc(_) => "diffusion-mc",
        }
    }

    /// `(log p(n), standard error of log p)`.
    pub fn log_p(&self, n: &SampleConfig) -> Result<(f64, f64), AsymptoticsError> {
        let infeasible = |reason: String| AsymptoticsError::InfeasibleN { n: n.size(), reason };
        match self {
            PSource::Pim(pp) => Ok((pim_log_p(n, pp), 0.0)),
            PSource::Table(t) => t
                .get(n.counts())
                .map(|v| (v, 0.0))
                .ok_or_else(|| infeasible(format!("table covers sizes up to {}", t.max_size()))),
            PSource::Mc(ens) => {
                if n.size() > MC_MAX_SIZE {
                    return Err(infeasible(format!("Monte Carlo estimates are limited to size {MC_MAX_SIZE}")));
                }
                let e = estimate_log_p(n, ens)?;
                Ok((e.log_p, e.se))
            }
        }
    }
}

/// Where the stationary density `p̃` comes from.
#[derive(Clone)]
pub enum PtildeSource {
    /// Dirichlet density with these parameters (`θQ` under PIM).
    Dirichlet(Vec<f64>),
    Kde(Arc<DensityEstimate>),
}

impl PtildeSource {
    pub fn name(&self) -> &'static str {
        match self {
            PtildeSource::Dirichlet(_) => "dirichlet",
            PtildeSource::Kde(_) => "kde",
        }
    }

    pub fn density(&self, x: &SimplexPoint) -> Result<f64, AsymptoticsError> {
        match self {
            PtildeSource::Dirichlet(a) => Ok(dirichlet_log_density(x, a)?.exp()),
            PtildeSource::Kde(k) => Ok(k.evaluate(x)?),
        }
    }

    /// Density without boundary checks, for averaging over random points.
    fn density_anywhere(&self, x: &SimplexPoint) -> f64 {
        match self {
            PtildeSource::Dirichlet(a) => dirichlet_log_density(x, a).map_or(0.0, f64::exp),
            PtildeSource::Kde(k) => k.evaluate_raw(x.chart()),
        }
    }
}

/// KDE at `x` with bandwidths `h` and `h/2`: `(estimate, halved, relative shift)`.
pub fn kde_stability(ens: &StationaryEnsemble, x: &SimplexPoint, h: Option<f64>) -> Result<(f64, f64, f64), AsymptoticsError> {
    let full = DensityEstimate::new(ens, h)?;
    let half = DensityEstimate::new(ens, Some(full.bandwidth() / 2.0))?;
    let a = full.evaluate(x)?;
    let b = half.evaluate(x)?;
    Ok((a, b, (a - b).abs() / a))
}

fn check_grid(grid: &[u64]) -> Result<(), AsymptoticsError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
        return Err(AsymptoticsError::BadGrid);
    }
    Ok(())
}

/// `n^{d−1} p(n·y^(n))` against `‖y‖^{1−d} p̃(y/‖y‖)`.
pub fn check_theorem_p(
    dir: &DirectionY,
    n_grid: &[u64],
    p_source: &PSource,
    ptilde: &PtildeSource,
    tolerance: f64,
) -> Result<ConvergenceReport, AsymptoticsError> {
    check_grid(n_grid)?;
    let d = dir.dim() as f64;
    let target = dir.norm().powf(1.0 - d) * ptilde.density(&dir.direction())?;
    let mut observed = Vec::new();
    let mut se = Vec::new();
    for &n in n_grid {
        let (lp, s) = p_source.log_p(&dir.lattice(n))?;
        let v = ((d - 1.0) * (n as f64).ln() + lp).exp();
        observed.push(v);
        se.push(v * s);
    }
    let provenance = format!("p={} ptilde={}", p_source.name(), ptilde.name());
    let r = ConvergenceReport::new("n^(d-1) p(n y^(n))", n_grid.to_vec(), observed, target, tolerance, provenance)?;
    Ok(if matches!(p_source, PSource::Mc(_)) { r.with_se(se) } else { r })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KOverBReport {
    /// `k(n y^(n)) / B(n y^(n) + 1)` with `k` from the `p` source.
    pub direct: ConvergenceReport,
    /// `E[p̃(D^(n))]`, `D^(n) ~ Dirichlet(n y^(n) + 1)`, by sampling.
    pub dirichlet: Option<ConvergenceReport>,
}

/// Both routes to the limit `k(n y^(n))/B(n y^(n)+1) → p̃(y/‖y‖)`; route (b)
/// runs when `draws > 0`.
pub fn check_k_over_b(
    dir: &DirectionY,
    n_grid: &[u64],
    p_source: &PSource,
    ptilde: &PtildeSource,
    tolerance: f64,
    draws: usize,
    seed: u64,
) -> Result<KOverBReport, AsymptoticsError> {
    check_grid(n_grid)?;
    let target = ptilde.density(&dir.direction())?;
    let mut direct = Vec::new();
    let mut direct_se = Vec::new();
    let mut sampled = Vec::new();
    let mut sampled_se = Vec::new();
    for &n in n_grid {
        let lattice = dir.lattice(n);
        let (lp, s) = p_source.log_p(&lattice)?;
        let shifted: Vec<f64> = lattice.counts().iter().map(|&c| f64::from(c) + 1.0).collect();
        let v = (lp - log_multinomial(lattice.counts()) - ln_beta(&shifted)).exp();
        direct.push(v);
        direct_se.push(v * s);
        if draws > 0 {
            let pts = sample_dirichlet_many(&shifted, 1.0, draws, seed ^ n)?;
            let vals: Vec<f64> = pts.iter().map(|x| ptilde.density_anywhere(x)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0).max(1.0);
            sampled.push(mean);
            sampled_se.push((var / vals.len() as f64).sqrt());
        }
    }
    let prov = format!("p={} ptilde={}", p_source.name(), ptilde.name());
    let mut direct_report = ConvergenceReport::new("k/B", n_grid.to_vec(), direct, target, tolerance, prov.clone())?;
    if matches!(p_source, PSource::Mc(_)) {
        direct_report = direct_report.with_se(direct_se);
    }
    let dirichlet = if draws > 0 {
        Some(
            ConvergenceReport::new("E[ptilde(D^(n))]", n_grid.to_vec(), sampled, target, tolerance, format!("{prov} draws={draws}"))?
                .with_se(sampled_se),
        )
    } else {
        None
    };
    Ok(KOverBReport { direct: direct_report, dirichlet })
}

/// `π[i | n y^(n)]` against `y_i/‖y‖`.
pub fn check_pi_limit(
    i: usize,
    dir: &DirectionY,
    n_grid: &[u64],
    pi: &dyn PiProvider,
    tolerance: f64,
) -> Result<ConvergenceReport, AsymptoticsError> {
    check_grid(n_grid)?;
    if i >= dir.dim() {
        return Err(AsymptoticsError::DimensionMismatch { expected: dir.dim(), got: i + 1 });
    }
    let target = dir.y()[i] / dir.norm();
    let observed = n_grid.iter().map(|&n| pi.pi(i, dir.lattice(n).counts())).collect::<Result<Vec<_>, _>>()?;
    ConvergenceReport::new(format!("pi[{}|n y^(n)]", i + 1), n_grid.to_vec(), observed, target, tolerance, pi.name())
}

/// Limit of the (scaled) probability of `event` along `y`.
pub fn transition_limit(event: Event, dir: &DirectionY, params: &ModelParams) -> f64 {
    let y = dir.y();
    let norm = dir.norm();
    match event {
        Event::Coalescence(j) => y[j] / norm,
        Event::Mutation { from, to } => params.theta() * params.p(from, to) * y[from] / (norm * norm),
        Event::Branching(j) => params.gamma()[j].abs() * y[j] / (norm * norm),
    }
}

/// One report per event: coalescence probabilities, and `n×` mutation and
/// branching probabilities, against their limits.
pub fn check_transition_limits(
    dir: &DirectionY,
    params: &ModelParams,
    n_grid: &[u64],
    pi: &dyn PiProvider,
    tolerance: f64,
) -> Result<Vec<ConvergenceReport>, AsymptoticsError> {
    check_grid(n_grid)?;
    let d = params.dim();
    if dir.dim() != d {
        return Err(AsymptoticsError::DimensionMismatch { expected: d, got: dir.dim() });
    }
    let mut events: Vec<Event> = (0..d).map(Event::Coalescence).collect();
    for to in 0..d {
        for from in 0..d {
            events.push(Event::Mutation { from, to });
        }
    }
    events.extend((0..d).map(Event::Branching));
    let dists = n_grid
        .iter()
        .map(|&n| transition_distribution(&dir.lattice(n), params, pi))
        .collect::<Result<Vec<_>, _>>()?;
    events
        .into_iter()
        .map(|e| {
            let scale = |n: u64| if matches!(e, Event::Coalescence(_)) { 1.0 } else { n as f64 };
            let observed = n_grid.iter().zip(&dists).map(|(&n, dist)| scale(n) * dist.prob(e)).collect();
            let label = if matches!(e, Event::Coalescence(_)) { format!("rho({e})") } else { format!("n*rho({e})") };
            ConvergenceReport::new(label, n_grid.to_vec(), observed, transition_limit(e, dir, params), tolerance, pi.name())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StirlingRow {
    pub n: u64,
    pub exact: f64,
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
}

impl StirlingRow {
    /// `(stage1/exact, stage2/stage1, stage3/stage2)`.
    pub fn ratios(&self) -> (f64, f64, f64) {
        ((self.stage1 - self.exact).exp(), (self.stage2 - self.stage1).exp(), (self.stage3 - self.stage2).exp())
    }
}

pub fn stirling_chain_report(n_grid: &[u64], pp: &PimParams, dir: &DirectionY) -> Result<Vec<StirlingRow>, AsymptoticsError> {
    check_grid(n_grid)?;
    Ok(n_grid
        .iter()
        .map(|&n| {
            let s = stirling_stages(n, dir, pp);
            StirlingRow { n, exact: s.exact, stage1: s.stage1, stage2: s.stage2, stage3: s.stage3 }
        })
        .collect())
}

pub fn write_stirling_csv<W: Write>(rows: &[StirlingRow], mut w: W, params_hash: &str) -> io::Result<()> {
    writeln!(w, "# {}", provenance_line("stirling-chain", params_hash, None))?;
    writeln!(w, "n,log_exact,log_stage1,log_stage2,log_stage3,ratio_1_exact,ratio_2_1,ratio_3_2")?;
    for r in rows {
        let (a, b, c) = r.ratios();
        let vals = [r.exact, r.stage1, r.stage2, r.stage3, a, b, c].map(fmt_f64);
        writeln!(w, "{},{}", r.n, vals.join(","))?;
    }
    Ok(())
}

/// Least-squares slope of `y` against `ln x`.
pub fn loglog_slope(x: &[f64], log_y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = log_y.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(log_y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `log p(n·y^(n))` against `log n` over `n_grid`.
pub fn degree_fit(dir: &DirectionY, n_grid: &[u64], p_source: &PSource) -> Result<f64, AsymptoticsError> {
    check_grid(n_grid)?;
    let lp = n_grid.iter().map(|&n| p_source.log_p(&dir.lattice(n)).map(|v| v.0)).collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    Ok(loglog_slope(&x, &lp))
}

/// `{start, start·f, start·f², …} ∩ [start, end]`.
pub fn geometric_grid(start: u64, end: u64, factor: f64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut x = start as f64;
    while x.round() as u64 <= end {
        let v = x.round() as u64;
        if out.last() != Some(&v) {
            out.push(v);
        }
        x *= factor;
        if factor <= 1.0 {
            break;
        }
    }
    out
}

/// `count` log-spaced integers from `start` to `end`.
pub fn log_spaced(start: u64, end: u64, count: usize) -> Vec<u64> {
    let (a, b) = ((start as f64).ln(), (end as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count.max(2) - 1) as f64).exp().round() as u64)
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{PimPi, TablePi};
    use crate::recursion::solve_neutral;

    fn uniform() -> PimParams {
        PimParams::new(2.0, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn report_verdicts() {
        let r = ConvergenceReport::new("x", vec![1, 2, 3, 4], vec![2.0, 1.5, 1.2, 1.1], 1.0, 0.2, "t").unwrap();
        assert!(r.pass && r.monotone_tail);
        let r = ConvergenceReport::new("x", vec![1, 2, 3], vec![1.1, 1.2, 1.05], 1.0, 0.2, "t").unwrap();
        assert!(!r.pass);
        let r = ConvergenceReport::new("x", vec![1, 2], vec![0.0, 0.0], 0.0, 1e-12, "t").unwrap();
        assert!(r.pass);
        assert!(ConvergenceReport::new("x", vec![2, 1], vec![0.0, 0.0], 0.0, 1.0, "t").is_err());
    }

    #[test]
    fn theorem_p_uniform_case() {
        let dir = DirectionY::new(vec![0.5, 0.5]).unwrap();
        let grid = geometric_grid(25, 3200, 2.0);
        let r = check_theorem_p(&dir, &grid, &PSource::Pim(uniform()), &PtildeSource::Dirichlet(vec![1.0, 1.0]), 1e-2).unwrap();
        for (&n, o) in r.n_grid.iter().zip(&r.observed) {
            // odd n rounds both coordinates up to a sample of size n + 1
            let size = dir.lattice(n).size() as f64;
            assert!((o - n as f64 / (size + 1.0)).abs() < 1e-10);
        }
        assert!(r.pass && r.strictly_decreasing());
        let mut out = Vec::new();
        r.write_csv(&mut out, "h", None).unwrap();
        assert!(String::from_utf8(out).unwrap().lines().nth(1).unwrap().starts_with("n,observed"));
    }

    #[test]
    fn theorem_p_target_for_unnormalized_direction() {
        let pp = PimParams::new(1.0, vec![0.6, 0.4]).unwrap();
        let dir = DirectionY::new(vec![1.0, 1.0]).unwrap();
        let r = check_theorem_p(&dir, &[1000], &PSource::Pim(pp.clone()), &PtildeSource::Dirichlet(pp.alpha()), 1.0).unwrap();
        let half = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert!((r.target - 0.5 * dirichlet_log_density(&half, &pp.alpha()).unwrap().exp()).abs() < 1e-14);
    }

    #[test]
    fn k_over_b_routes() {
        let dir = DirectionY::new(vec![0.5, 0.5]).unwrap();
        let r = check_k_over_b(&dir, &[10, 20], &PSource::Pim(uniform()), &PtildeSource::Dirichlet(vec![1.0, 1.0]), 1e-12, 0, 0).unwrap();
        assert!(r.direct.abs_err.iter().all(|e| *e < 1e-10));
        let pp = PimParams::new(4.0, vec![0.5, 0.5]).unwrap();
        let r = check_k_over_b(&dir, &[200, 400, 800], &PSource::Pim(pp.clone()), &PtildeSource::Dirichlet(pp.alpha()), 1e-2, 20_000, 1)
            .unwrap();
        assert!((r.direct.target - 1.5).abs() < 1e-12);
        let b = r.dirichlet.unwrap();
        let se = b.se.as_ref().unwrap();
        for k in 0..3 {
            assert!((b.observed[k] - r.direct.observed[k]).abs() < 3.0 * se[k]);
        }
    }

    #[test]
    fn pi_limits() {
        let dir = DirectionY::new(vec![1.0, 1.0]).unwrap();
        let r = check_pi_limit(0, &dir, &[10, 100, 1000], &PimPi(uniform()), 1e-12).unwrap();
        assert!(r.observed.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let pp = PimParams::new(1.0, vec![0.6, 0.4]).unwrap();
        let dir = DirectionY::new(vec![1.0, 3.0]).unwrap();
        let r = check_pi_limit(0, &dir, &[100, 500], &PimPi(pp), 1e-3).unwrap();
        assert!((r.target - 0.25).abs() < 1e-15 && r.pass);

        let params = ModelParams::new(2, 1.0, vec![0.9, 0.1, 0.2, 0.8], vec![0.0, 0.0]).unwrap();
        let table = solve_neutral(&params, 202).unwrap();
        let dir = DirectionY::new(vec![1.0, 1.0]).unwrap();
        let grid: Vec<u64> = (1..=10).map(|k| 10 * k).collect();
        let r = check_pi_limit(0, &dir, &grid, &TablePi::new(table), 1e-2).unwrap();
        assert!(r.strictly_decreasing());
    }

    #[test]
    fn transition_limit_values() {
        let params = ModelParams::pim(2.0, &[0.5, 0.5]).unwrap();
        let dir = DirectionY::new(vec![1.0, 1.0]).unwrap();
        let reports = check_transition_limits(&dir, &params, &[100, 1000, 10_000], &PimPi(uniform()), 1e-2).unwrap();
        let find = |q: &str| reports.iter().find(|r| r.quantity == q).unwrap();
        assert!((find("rho(coalescence(1))").target - 0.5).abs() < 1e-15);
        assert!((find("n*rho(mutation(1->2))").target - 0.25).abs() < 1e-15);
        assert_eq!(find("n*rho(branching(1))").target, 0.0);
        assert!(reports.iter().all(|r| r.pass), "{reports:#?}");
    }

    #[test]
    fn stirling_ratios() {
        let dir = DirectionY::new(vec![0.3, 0.7]).unwrap();
        let pp = PimParams::new(1.5, vec![0.4, 0.6]).unwrap();
        let rows = stirling_chain_report(&[100, 10_000], &pp, &dir).unwrap();
        let (a, _, _) = rows[1].ratios();
        assert!((a - 1.0).abs() < 1e-3);
        assert_eq!(rows[1].stage3, crate::pim::pim_asymptotic_log_p(10_000, &dir, &pp));
    }

    #[test]
    fn grids_and_slopes() {
        assert_eq!(geometric_grid(25, 3200, 2.0), vec![25, 50, 100, 200, 400, 800, 1600, 3200]);
        assert_eq!(log_spaced(10, 1000, 3), vec![10, 100, 1000]);
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| -2.0 * v.ln() + 3.0).collect();
        assert!((loglog_slope(&x, &y) + 2.0).abs() < 1e-14);
    }
}
