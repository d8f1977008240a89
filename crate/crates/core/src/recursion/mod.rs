//! Exact sampling probabilities from the normalization of the jump chain.
//!
//! Substituting `π[i|n] = (n_i+1)/(‖n‖+1) · p(n+e_i)/p(n)` into the backward
//! transition probabilities and requiring them to sum to one at every state
//! `n` (self-mutations `i = j` included) gives, with `m = ‖n‖` and
//! `D(n) = Σ_r n_r|γ_r| + m(m − 1 + θ)`,
//!
//! ```text
//! D(n) p(n) = m Σ_j (n_j − 1) p(n − e_j)
//!           + θ Σ_{i,j: n_j ≥ 1} P_ij (n_i + 1 − δ_ij) p(n − e_j + e_i)
//!           + m/(m+1) Σ_j |γ_j| (n_j + 1) p(n + e_j)
//! ```
//!
//! Under neutrality the system is block triangular in `m`: size 1 reduces to
//! the invariant distribution of `P` and each larger size is a sparse,
//! strictly column diagonally dominant system given the size below. With
//! selection the last term couples each size to the next one, so the system
//! is truncated at `N_max` and closed there.

mod banded;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use banded::BandedMatrix;

use crate::lattice::{size_of, LatticeError, LatticeIndex, SampleConfig};
use crate::params::ModelParams;
use crate::table::ProbTable;

/// Largest per-size block the neutral solver accepts.
pub const MAX_LEVEL_LEN: usize = 100_000;
/// Largest dense block the selection solver accepts.
pub const MAX_DENSE_LEVEL_LEN: usize = 4_000;
/// Relative residual accepted for neutral tables.
pub const NEUTRAL_RESIDUAL_TOL: f64 = 1e-12;
/// Relative residual accepted for truncated selection tables.
pub const SELECTION_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("singular system at sample size {size} (condition estimate {condition_estimate:e})")]
    SingularSystem { size: u32, condition_estimate: f64 },
    #[error("system too large: {0}")]
    DimensionTooLarge(String),
    #[error("truncation not converged: max |Δ log p| = {max_error:e} exceeds {tolerance:e}")]
    NonConvergedTruncation { max_error: f64, tolerance: f64 },
    #[error("parameters have non-zero selection; use the truncated solver")]
    NotNeutral,
    #[error("invalid truncation policy: {0}")]
    BadPolicy(String),
    #[error("configuration {0:?} is outside the table")]
    OutOfTable(Vec<u32>),
    #[error("maximal sample size must be at least 1")]
    ZeroSize,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// How the upward branching terms leaving the top size `N_max` are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Closure {
    /// Drop every term that refers to size `N_max + 1`.
    DropBranching,
    /// Replace `π[j|n]` at the top size by the neutral parent-independent
    /// form `(n_j + θ q_j)/(‖n‖ + θ)`, `q` the invariant law of `P`.
    #[default]
    PimProxy,
}

impl Closure {
    pub fn name(self) -> &'static str {
        match self {
            Closure::DropBranching => "drop-branching",
            Closure::PimProxy => "pim-proxy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationPolicy {
    pub max_size: u32,
    pub closure: Closure,
    /// Fail when the truncation error estimate exceeds this.
    pub tolerance: Option<f64>,
}

impl TruncationPolicy {
    pub fn new(max_size: u32, closure: Closure) -> Self {
        Self { max_size, closure, tolerance: None }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn describe(&self) -> String {
        format!("{}@{}", self.closure.name(), self.max_size)
    }
}

/// Which block a coefficient of the normalization identity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Same,
    Lower,
    Upper,
}

/// Calls `visit(block, target, coeff)` for every term of the identity at
/// `n`, written as `Σ coeff · p(target) = 0`.
fn for_each_term(params: &ModelParams, n: &[u32], mut visit: impl FnMut(Block, &[u32], f64)) {
    let d = params.dim();
    let theta = params.theta();
    let m = size_of(n) as f64;
    let gamma = params.gamma();
    let selection: f64 = n.iter().zip(gamma).map(|(&c, g)| f64::from(c) * g.abs()).sum();
    let self_mutation: f64 = (0..d).map(|j| params.p(j, j) * f64::from(n[j])).sum();
    visit(Block::Same, n, selection + m * (m - 1.0 + theta) - theta * self_mutation);

    let mut target = n.to_vec();
    for j in 0..d {
        if n[j] == 0 {
            continue;
        }
        target[j] -= 1;
        if n[j] >= 2 {
            visit(Block::Lower, &target, -m * f64::from(n[j] - 1));
        }
        for i in (0..d).filter(|&i| i != j) {
            let pij = params.p(i, j);
            if pij > 0.0 {
                target[i] += 1;
                visit(Block::Same, &target, -theta * pij * f64::from(n[i] + 1));
                target[i] -= 1;
            }
        }
        target[j] += 1;
    }
    for j in 0..d {
        if gamma[j] != 0.0 {
            target[j] += 1;
            visit(Block::Upper, &target, -m / (m + 1.0) * gamma[j].abs() * f64::from(n[j] + 1));
            target[j] -= 1;
        }
    }
}

/// `(n_j + θ q_j)/(‖n‖ + θ)`.
fn proxy_pi(theta: f64, q: &[f64], n: &[u32], j: usize) -> f64 {
    (f64::from(n[j]) + theta * q[j]) / (size_of(n) as f64 + theta)
}

/// Diagonal contribution of the closed upward terms at the top size.
fn closure_diagonal(params: &ModelParams, closure: Closure, q: &[f64], n: &[u32]) -> f64 {
    match closure {
        Closure::DropBranching => 0.0,
        Closure::PimProxy => {
            // m/(m+1)|γ_j|(n_j+1) p(n+e_j) = m |γ_j| π̂[j|n] p(n)
            let m = size_of(n) as f64;
            -m * params
                .gamma()
                .iter()
                .enumerate()
                .map(|(j, g)| g.abs() * proxy_pi(params.theta(), q, n, j))
                .sum::<f64>()
        }
    }
}

/// The full truncated linear system over all sizes `1..=max_size`, with the
/// identity at `e_d` replaced by `Σ_i p(e_i) = 1`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub index: LatticeIndex,
    /// `(row, col, value)` triplets; duplicates are summed.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn assemble(params: &ModelParams, max_size: u32, closure: Closure) -> Result<Self, SolveError> {
        let d = params.dim();
        let index = LatticeIndex::new(d, max_size)?;
        let q = params.mutation_stationary();
        let mut entries = Vec::new();
        let mut rhs = vec![0.0; index.len()];
        let normalization_row = d - 1;
        for m in 1..=max_size {
            for n in index.level(m) {
                let row = index.index_of(n.counts()).expect("in range");
                if row == normalization_row {
                    for i in 0..d {
                        entries.push((row, i, 1.0));
                    }
                    rhs[row] = 1.0;
                    continue;
                }
                for_each_term(params, n.counts(), |block, target, coeff| {
                    if block == Block::Upper && m == max_size {
                        return;
                    }
                    entries.push((row, index.index_of(target).expect("in range"), coeff));
                });
                if m == max_size {
                    entries.push((row, row, closure_diagonal(params, closure, &q, n.counts())));
                }
            }
        }
        Ok(Self { index, entries, rhs })
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for &(r, c, v) in &self.entries {
            a[(r, c)] += v;
        }
        a
    }

    /// Dense LU on the whole system; practical only for small tables.
    pub fn solve_dense(&self) -> Result<Vec<f64>, SolveError> {
        let a = self.to_dense();
        let b = DVector::from_column_slice(&self.rhs);
        let lu = a.lu();
        let x = lu.solve(&b).ok_or(SolveError::SingularSystem {
            size: self.index.max_size(),
            condition_estimate: f64::INFINITY,
        })?;
        Ok(x.iter().copied().collect())
    }

    /// Largest row residual relative to the magnitude of its terms.
    pub fn relative_residual(&self, p: &[f64]) -> f64 {
        let n = self.len();
        let mut res = self.rhs.iter().map(|b| -b).collect::<Vec<_>>();
        let mut scale = self.rhs.iter().map(|b| b.abs()).collect::<Vec<_>>();
        for &(r, c, v) in &self.entries {
            res[r] += v * p[c];
            scale[r] += (v * p[c]).abs();
        }
        (0..n).map(|r| if scale[r] > 0.0 { res[r].abs() / scale[r] } else { res[r].abs() }).fold(0.0, f64::max)
    }
}

fn to_table(index: LatticeIndex, p: &[f64], size: u32) -> Result<ProbTable, SolveError> {
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(SolveError::SingularSystem { size, condition_estimate: f64::INFINITY });
    }
    Ok(ProbTable::from_values(index, p.iter().map(|v| v.ln()).collect()).expect("lengths agree"))
}

/// Size-1 block: `Σ coeff p = 0` for `e_1..e_{d−1}`, last row `Σ p(e_i) = 1`.
fn solve_size_one(a: DMatrix<f64>) -> Result<Vec<f64>, SolveError> {
    let d = a.nrows();
    let mut a = a;
    for c in 0..d {
        a[(d - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(d);
    b[d - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(SolveError::SingularSystem { size: 1, condition_estimate: f64::INFINITY })?;
    Ok(x.iter().copied().collect())
}

/// Exact table for `γ = 0`, solved one sample size at a time.
pub fn solve_neutral(params: &ModelParams, max_size: u32) -> Result<ProbTable, SolveError> {
    if !params.is_neutral() {
        return Err(SolveError::NotNeutral);
    }
    if max_size == 0 {
        return Err(SolveError::ZeroSize);
    }
    let d = params.dim();
    let index = LatticeIndex::new(d, max_size)?;
    let largest = index.level_len(max_size);
    if largest > MAX_LEVEL_LEN {
        return Err(SolveError::DimensionTooLarge(format!(
            "size level {max_size} has {largest} configurations (limit {MAX_LEVEL_LEN})"
        )));
    }
    let mut p = vec![0.0; index.len()];

    let mut a1 = DMatrix::zeros(d, d);
    for (row, n) in index.level(1).iter().enumerate() {
        for_each_term(params, n.counts(), |_, target, coeff| {
            a1[(row, index.index_of(target).expect("size one"))] += coeff;
        });
    }
    let p1 = solve_size_one(a1)?;
    p[..d].copy_from_slice(&p1);

    for m in 2..=max_size {
        let offset = index.level_offset(m);
        let len = index.level_len(m);
        let level = index.level(m);
        // band limits of the same-size coupling in colex order
        let (mut kl, mut ku) = (0usize, 0usize);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(len);
        let mut rhs = vec![0.0; len];
        for (r, n) in level.iter().enumerate() {
            let mut row = Vec::new();
            for_each_term(params, n.counts(), |block, target, coeff| {
                let k = index.index_of(target).expect("in range");
                match block {
                    Block::Same => {
                        let c = k - offset;
                        if c < r {
                            kl = kl.max(r - c);
                        } else {
                            ku = ku.max(c - r);
                        }
                        row.push((c, coeff));
                    }
                    Block::Lower => rhs[r] -= coeff * p[k],
                    Block::Upper => unreachable!("neutral identity has no upward terms"),
                }
            });
            rows.push(row);
        }
        let mut band = BandedMatrix::zeros(len, kl, ku);
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                band.add(r, c, v);
            }
        }
        let check = band.clone();
        let (x, cond) = band
            .solve(&rhs)
            .map_err(|z| SolveError::SingularSystem { size: m, condition_estimate: z.condition_estimate })?;
        let ax = check.mul_vec(&x);
        for r in 0..len {
            let scale: f64 = rows[r].iter().map(|&(c, v)| (v * x[c]).abs()).sum::<f64>() + rhs[r].abs();
            if (ax[r] - rhs[r]).abs() > NEUTRAL_RESIDUAL_TOL * scale {
                return Err(SolveError::SingularSystem { size: m, condition_estimate: cond });
            }
        }
        p[offset..offset + len].copy_from_slice(&x);
    }
    to_table(index, &p, max_size)
}

/// Truncated table under selection, with per-state error estimates.
#[derive(Debug, Clone)]
pub struct SelectionSolution {
    pub table: ProbTable,
    /// `|log p(n)|_{N_max} − log p(n)|_{N_max−2}|`, aligned with the table index.
    pub error_estimate: Vec<f64>,
    pub max_error: f64,
    pub policy: TruncationPolicy,
}

/// Dense block-tridiagonal elimination over sizes `1..=top`: each size is
/// expressed through the one below it, starting from the closed top size.
fn solve_truncated_levels(params: &ModelParams, top: u32, closure: Closure) -> Result<(LatticeIndex, Vec<f64>), SolveError> {
    let d = params.dim();
    let index = LatticeIndex::new(d, top)?;
    let q = params.mutation_stationary();
    let mut dense_entries = 0usize;
    for m in 1..=top {
        let len = index.level_len(m);
        if len > MAX_DENSE_LEVEL_LEN {
            return Err(SolveError::DimensionTooLarge(format!(
                "size level {m} has {len} configurations (dense limit {MAX_DENSE_LEVEL_LEN})"
            )));
        }
        dense_entries += len * index.level_len(m.saturating_sub(1).max(1));
    }
    if dense_entries > 30_000_000 {
        return Err(SolveError::DimensionTooLarge(format!("{dense_entries} dense transfer entries")));
    }

    // per level: same-size block, sparse lower and upper couplings
    struct Level {
        same: DMatrix<f64>,
        lower: Vec<(usize, usize, f64)>,
        upper: Vec<(usize, usize, f64)>,
    }
    let mut levels = Vec::with_capacity(top as usize);
    for m in 1..=top {
        let offset = index.level_offset(m);
        let len = index.level_len(m);
        let mut lvl = Level { same: DMatrix::zeros(len, len), lower: Vec::new(), upper: Vec::new() };
        for (r, n) in index.level(m).iter().enumerate() {
            for_each_term(params, n.counts(), |block, target, coeff| match block {
                Block::Same => lvl.same[(r, index.index_of(target).expect("in range") - offset)] += coeff,
                Block::Lower => {
                    let k = index.index_of(target).expect("in range") - index.level_offset(m - 1);
                    lvl.lower.push((r, k, coeff));
                }
                Block::Upper => {
                    if m < top {
                        let k = index.index_of(target).expect("in range") - index.level_offset(m + 1);
                        lvl.upper.push((r, k, coeff));
                    }
                }
            });
            if m == top {
                lvl.same[(r, r)] += closure_diagonal(params, closure, &q, n.counts());
            }
        }
        levels.push(lvl);
    }

    // transfer[m] maps p_{m-1} to p_m for m >= 2
    let mut transfer: Vec<Option<DMatrix<f64>>> = vec![None; top as usize + 1];
    let mut p = vec![0.0; index.len()];
    for m in (1..=top).rev() {
        let lvl = &levels[m as usize - 1];
        let mut eff = lvl.same.clone();
        if m < top {
            let next = transfer[m as usize + 1].as_ref().expect("computed above");
            for &(r, k, v) in &lvl.upper {
                for c in 0..eff.ncols() {
                    eff[(r, c)] += v * next[(k, c)];
                }
            }
        }
        if m == 1 {
            let p1 = solve_size_one(eff)?;
            p[..d].copy_from_slice(&p1);
            break;
        }
        let rows = index.level_len(m);
        let cols = index.level_len(m - 1);
        let mut neg_lower = DMatrix::zeros(rows, cols);
        for &(r, k, v) in &lvl.lower {
            neg_lower[(r, k)] -= v;
        }
        let lu = eff.lu();
        let s = lu
            .solve(&neg_lower)
            .ok_or(SolveError::SingularSystem { size: m, condition_estimate: f64::INFINITY })?;
        transfer[m as usize] = Some(s);
    }
    for m in 2..=top {
        let prev = index.level_offset(m - 1);
        let prev_len = index.level_len(m - 1);
        let x = DVector::from_column_slice(&p[prev..prev + prev_len]);
        let next = transfer[m as usize].as_ref().expect("computed") * x;
        let off = index.level_offset(m);
        p[off..off + next.len()].copy_from_slice(next.as_slice());
    }
    Ok((index, p))
}

fn truncated_table(params: &ModelParams, max_size: u32, top: u32, closure: Closure) -> Result<ProbTable, SolveError> {
    let (_, p) = solve_truncated_levels(params, top, closure)?;
    let system = LinearSystem::assemble(params, top, closure)?;
    let residual = system.relative_residual(&p);
    if !(residual <= SELECTION_RESIDUAL_TOL) {
        return Err(SolveError::SingularSystem { size: top, condition_estimate: residual / f64::EPSILON });
    }
    let index = LatticeIndex::new(params.dim(), max_size)?;
    let keep = index.len();
    to_table(index, &p[..keep], max_size)
}

/// Table for sizes `≤ max_size` from the system truncated at
/// `policy.max_size`, with the closure rule applied above it.
pub fn solve_selection_truncated(
    params: &ModelParams,
    max_size: u32,
    policy: &TruncationPolicy,
) -> Result<SelectionSolution, SolveError> {
    if max_size == 0 {
        return Err(SolveError::ZeroSize);
    }
    if policy.max_size < max_size + 1 {
        return Err(SolveError::BadPolicy(format!(
            "N_max = {} must be at least N + 1 = {}",
            policy.max_size,
            max_size + 1
        )));
    }
    let table = truncated_table(params, max_size, policy.max_size, policy.closure)?;
    let coarse_top = policy.max_size.saturating_sub(2).max(max_size);
    let coarse = truncated_table(params, max_size, coarse_top, policy.closure)?;
    let error_estimate: Vec<f64> =
        table.values().iter().zip(coarse.values()).map(|(a, b)| (a - b).abs()).collect();
    let max_error = error_estimate.iter().copied().fold(0.0, f64::max);
    if let Some(tolerance) = policy.tolerance {
        if max_error > tolerance {
            return Err(SolveError::NonConvergedTruncation { max_error, tolerance });
        }
    }
    Ok(SelectionSolution { table, error_estimate, max_error, policy: policy.clone() })
}

/// Neutral parameters go to [`solve_neutral`], others to the truncated solver.
pub fn solve(params: &ModelParams, max_size: u32, policy: Option<&TruncationPolicy>) -> Result<ProbTable, SolveError> {
    if params.is_neutral() {
        solve_neutral(params, max_size)
    } else {
        let default = TruncationPolicy::new(max_size + 40, Closure::default());
        Ok(solve_selection_truncated(params, max_size, policy.unwrap_or(&default))?.table)
    }
}

/// `π[i|n] = (n_i+1)/(‖n‖+1) · exp(log p(n+e_i) − log p(n))`, with
/// `π[i|0] = p(e_i)`.
pub fn pi_from_table(i: usize, counts: &[u32], table: &ProbTable) -> Result<f64, SolveError> {
    let mut up = counts.to_vec();
    up[i] += 1;
    let lp_up = table.get(&up).ok_or_else(|| SolveError::OutOfTable(up.clone()))?;
    let m = size_of(counts);
    if m == 0 {
        return Ok(lp_up.exp());
    }
    let lp = table.get(counts).ok_or_else(|| SolveError::OutOfTable(counts.to_vec()))?;
    Ok(f64::from(counts[i] + 1) / (m as f64 + 1.0) * (lp_up - lp).exp())
}

/// `π[·|n]` for a configuration, convenience over [`pi_from_table`].
pub fn pi_vector(n: &SampleConfig, table: &ProbTable) -> Result<Vec<f64>, SolveError> {
    (0..n.dim()).map(|i| pi_from_table(i, n.counts(), table)).collect()
}
