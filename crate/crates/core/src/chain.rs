//! The block-counting jump chain of the typed ancestral selection graph.
//!
//! At state `n` with `D = Σ_r n_r|γ_r| + ‖n‖(‖n‖ − 1 + θ)` the chain moves to
//! `n − v` with probability
//!
//! ```text
//! v = e_j        n_j(n_j − 1) / (D π[j|n−e_j])
//! v = e_j − e_i  θ P_ij n_j π[i|n−e_j] / (D π[j|n−e_j])
//! v = −e_j       ‖n‖ |γ_j| π[j|n] / D
//! ```

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffusion::{estimate_k, StationaryEnsemble};
use crate::lattice::{size_of, SampleConfig};
use crate::output::provenance_line;
use crate::params::ModelParams;
use crate::pim::{pim_pi, PimParams};
use crate::recursion::pi_from_table;
use crate::simplex::DirectionY;
use crate::table::ProbTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("π[{i}|{counts:?}] is not available from the {provider} provider")]
    PiOutOfRange { i: usize, counts: Vec<u32>, provider: &'static str },
    #[error("dimension mismatch: model has d = {expected}, state has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no transition has positive probability at {0:?}")]
    NoTransition(Vec<u32>),
}

/// Source of the conditional sampling probabilities `π[i|n]`.
pub trait PiProvider: Send + Sync {
    /// `π[i|n]`; `counts` may be the empty sample.
    fn pi(&self, i: usize, counts: &[u32]) -> Result<f64, ChainError>;
    /// Accuracy of `Σ_i π[i|n] = 1`.
    fn tolerance(&self) -> f64;
    fn name(&self) -> &'static str;
}

/// Closed form for neutral parent-independent mutation.
#[derive(Debug, Clone)]
pub struct PimPi(pub PimParams);

impl PiProvider for PimPi {
    fn pi(&self, i: usize, counts: &[u32]) -> Result<f64, ChainError> {
        Ok(pim_pi(i, counts, &self.0))
    }

    fn tolerance(&self) -> f64 {
        1e-12
    }

    fn name(&self) -> &'static str {
        "pim"
    }
}

/// Ratios of an exact or truncated probability table.
#[derive(Debug, Clone)]
pub struct TablePi(pub Arc<ProbTable>);

impl TablePi {
    pub fn new(table: ProbTable) -> Self {
        Self(Arc::new(table))
    }
}

impl PiProvider for TablePi {
    fn pi(&self, i: usize, counts: &[u32]) -> Result<f64, ChainError> {
        pi_from_table(i, counts, &self.0).map_err(|_| ChainError::PiOutOfRange {
            i,
            counts: counts.to_vec(),
            provider: self.name(),
        })
    }

    fn tolerance(&self) -> f64 {
        1e-10
    }

    fn name(&self) -> &'static str {
        "table"
    }
}

/// `π[i|n] = k(n + e_i) / k(n)` from stationary diffusion samples. The
/// ratios sum to one exactly up to rounding since `Σ_i x_i = 1` per sample.
#[derive(Debug, Clone)]
pub struct McPi(pub Arc<StationaryEnsemble>);

impl PiProvider for McPi {
    fn pi(&self, i: usize, counts: &[u32]) -> Result<f64, ChainError> {
        let err = || ChainError::PiOutOfRange { i, counts: counts.to_vec(), provider: "mc" };
        let k = estimate_k(counts, &self.0).map_err(|_| err())?;
        let mut up = counts.to_vec();
        up[i] += 1;
        let k_up = estimate_k(&up, &self.0).map_err(|_| err())?;
        if !(k.value > 0.0) {
            return Err(err());
        }
        Ok(k_up.value / k.value)
    }

    fn tolerance(&self) -> f64 {
        1e-10
    }

    fn name(&self) -> &'static str {
        "mc"
    }
}

/// Event labels; types are 0-based internally and printed 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    /// Two type-`j` lineages merge; `v = e_j`.
    Coalescence(usize),
    /// A type-`to` lineage is traced back to a type-`from` parent;
    /// `v = e_to − e_from`.
    Mutation { from: usize, to: usize },
    /// A type-`j` lineage branches; `v = −e_j`.
    Branching(usize),
}

impl Event {
    /// Jump vector `v`; the next state is `n − v`.
    pub fn jump(self, d: usize) -> Vec<i64> {
        let mut v = vec![0i64; d];
        match self {
            Event::Coalescence(j) => v[j] += 1,
            Event::Mutation { from, to } => {
                v[to] += 1;
                v[from] -= 1;
            }
            Event::Branching(j) => v[j] -= 1,
        }
        v
    }

    /// `n − v`, or `None` if a count would become negative.
    pub fn apply(self, counts: &[u32]) -> Option<Vec<u32>> {
        let v = self.jump(counts.len());
        counts.iter().zip(&v).map(|(&c, &dv)| u32::try_from(i64::from(c) - dv).ok()).collect()
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::Coalescence(j) => write!(f, "coalescence({})", j + 1),
            Event::Mutation { from, to } => write!(f, "mutation({}->{})", from + 1, to + 1),
            Event::Branching(j) => write!(f, "branching({})", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDistribution {
    pub state: SampleConfig,
    pub denominator: f64,
    /// Nonzero entries: coalescences by `j`, mutations by `(to, from)`
    /// lexicographic, branchings by `j`.
    pub entries: Vec<(Event, f64)>,
}

impl TransitionDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, event: Event) -> f64 {
        self.entries.iter().find(|(e, _)| *e == event).map_or(0.0, |&(_, p)| p)
    }

    /// Sum of probabilities of entries with jump vector `v`.
    pub fn prob_of_jump(&self, v: &[i64]) -> f64 {
        let d = self.state.dim();
        self.entries.iter().filter(|(e, _)| e.jump(d) == v).map(|(_, p)| p).sum()
    }

    /// Inverse-CDF draw for `u ∈ [0, 1)`, scaled by the entry total.
    pub fn select(&self, u: f64) -> Event {
        let target = u * self.total();
        let mut acc = 0.0;
        for &(e, p) in &self.entries {
            acc += p;
            if target < acc {
                return e;
            }
        }
        self.entries.last().expect("non-empty distribution").0
    }
}

pub fn transition_distribution(
    n: &SampleConfig,
    params: &ModelParams,
    pi: &dyn PiProvider,
) -> Result<TransitionDistribution, ChainError> {
    let d = params.dim();
    if n.dim() != d {
        return Err(ChainError::DimensionMismatch { expected: d, got: n.dim() });
    }
    let c = n.counts();
    let m = size_of(c) as f64;
    let theta = params.theta();
    let gamma = params.gamma();
    let denominator =
        c.iter().zip(gamma).map(|(&k, g)| f64::from(k) * g.abs()).sum::<f64>() + m * (m - 1.0 + theta);
    let mut entries = Vec::new();

    // π[·|n − e_j] for every j with n_j ≥ 1
    let mut below: Vec<Option<Vec<f64>>> = vec![None; d];
    for j in (0..d).filter(|&j| c[j] >= 1) {
        let mut lower = c.to_vec();
        lower[j] -= 1;
        below[j] = Some((0..d).map(|i| pi.pi(i, &lower)).collect::<Result<_, _>>()?);
    }
    for j in 0..d {
        if c[j] >= 2 {
            let pij = below[j].as_ref().expect("n_j ≥ 1")[j];
            let num = f64::from(c[j]) * f64::from(c[j] - 1);
            entries.push((Event::Coalescence(j), num / (denominator * pij)));
        }
    }
    for j in 0..d {
        let Some(pis) = below[j].as_ref() else { continue };
        for i in 0..d {
            let p = params.p(i, j);
            if p > 0.0 {
                let prob = theta * p * f64::from(c[j]) * pis[i] / (denominator * pis[j]);
                entries.push((Event::Mutation { from: i, to: j }, prob));
            }
        }
    }
    for j in 0..d {
        if gamma[j] != 0.0 {
            let prob = m * gamma[j].abs() * pi.pi(j, c)? / denominator;
            entries.push((Event::Branching(j), prob));
        }
    }
    entries.retain(|&(_, p)| p > 0.0);
    Ok(TransitionDistribution { state: n.clone(), denominator, entries })
}

/// One move of the chain.
pub fn step<R: Rng + ?Sized>(
    n: &SampleConfig,
    params: &ModelParams,
    pi: &dyn PiProvider,
    rng: &mut R,
) -> Result<(SampleConfig, Event), ChainError> {
    let dist = transition_distribution(n, params, pi)?;
    if dist.entries.is_empty() {
        return Err(ChainError::NoTransition(n.counts().to_vec()));
    }
    let event = dist.select(rng.random::<f64>());
    let next = event.apply(n.counts()).expect("positive entries keep counts non-negative");
    Ok((SampleConfig::new(next).expect("legal moves keep the sample non-empty"), event))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrajectory {
    pub states: Vec<SampleConfig>,
    /// `events[k]` leads from `states[k]` to `states[k + 1]`.
    pub events: Vec<Event>,
    pub seed: u64,
    /// Stopped at `max_steps` before reaching a single lineage.
    pub truncated: bool,
}

impl ChainTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.events.len()
    }

    /// CSV with columns `step,n_1..n_d,event`.
    pub fn write_csv<W: Write>(&self, mut w: W, params_hash: &str) -> io::Result<()> {
        let d = self.states.first().map_or(0, SampleConfig::dim);
        writeln!(w, "# {}", provenance_line("chain-trajectory", params_hash, Some(self.seed)))?;
        let cols: Vec<String> = (1..=d).map(|i| format!("n_{i}")).collect();
        writeln!(w, "step,{},event", cols.join(","))?;
        for (k, s) in self.states.iter().enumerate() {
            let counts: Vec<String> = s.counts().iter().map(u32::to_string).collect();
            let label = if k == 0 { "start".to_string() } else { self.events[k - 1].to_string() };
            writeln!(w, "{k},{},{label}", counts.join(","))?;
        }
        if self.truncated {
            writeln!(w, "# truncated at max_steps")?;
        }
        Ok(())
    }
}

/// Runs the chain from `n0` until one lineage is left or `max_steps` moves
/// were made.
pub fn simulate_to_mrca<R: Rng + ?Sized>(
    n0: &SampleConfig,
    params: &ModelParams,
    pi: &dyn PiProvider,
    rng: &mut R,
    max_steps: usize,
) -> Result<ChainTrajectory, ChainError> {
    let mut states = vec![n0.clone()];
    let mut events = Vec::new();
    let mut current = n0.clone();
    while current.size() > 1 {
        if events.len() >= max_steps {
            return Ok(ChainTrajectory { states, events, seed: 0, truncated: true });
        }
        let (next, event) = step(&current, params, pi, rng)?;
        events.push(event);
        states.push(next.clone());
        current = next;
    }
    Ok(ChainTrajectory { states, events, seed: 0, truncated: false })
}

/// Deterministic generator for replicate `index` of base seed `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `ρ^(n)(v | y^(n))`, the probability of `event` at the lattice state
/// `n·y^(n)`.
pub fn scaled_transition(
    event: Event,
    n: u64,
    dir: &DirectionY,
    params: &ModelParams,
    pi: &dyn PiProvider,
) -> Result<f64, ChainError> {
    let state = dir.lattice(n);
    Ok(transition_distribution(&state, params, pi)?.prob(event))
}
