//! The `asg` command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 numeric failure.
//! Outputs go to `--out`, else to a default file name inside `$ASG_OUT_DIR`,
//! else to standard output.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::asymptotics::{
    check_k_over_b, check_pi_limit, check_theorem_p, check_transition_limits, degree_fit, geometric_grid,
    stirling_chain_report, write_stirling_csv, AsymptoticsError, ConvergenceReport, PSource, PtildeSource,
};
use crate::chain::{replicate_rng, simulate_to_mrca, ChainError, PiProvider, PimPi, TablePi};
use crate::config::{parse_list, parse_params, ConfigError};
use crate::diffusion::{
    estimate_log_p, stationary_sample, BoundaryScheme, DensityEstimate, DiffusionConfig, DiffusionError,
};
use crate::dirichlet::{clt_covariance, phi_n_sup, phi_sup_limit, sup_norm_gap, AlphaSequence, DirichletError, Grid};
use crate::lattice::SampleConfig;
use crate::output::{fmt_f64, provenance_line};
use crate::params::{ModelParams, ValidationReport};
use crate::pim::{pim_log_p, pim_pi, PimParams};
use crate::recursion::{solve, solve_selection_truncated, Closure, SolveError, TruncationPolicy};
use crate::simplex::{DirectionY, SimplexPoint};
use crate::table::ProbTable;

pub const OUT_DIR_ENV: &str = "ASG_OUT_DIR";
/// Mutation rate used by `asymptotics` when no model parameters are given.
pub const DEFAULT_THETA: f64 = 2.0;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Numeric(String),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ValidationReport> for CliError {
    fn from(e: ValidationReport) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::BadPolicy(_) | SolveError::ZeroSize | SolveError::Lattice(_) | SolveError::OutOfTable(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::NonFiniteState { .. } | DiffusionError::EmptyEnsemble => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::DimensionMismatch { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DirichletError> for CliError {
    fn from(e: DirichletError) -> Self {
        match e {
            DirichletError::SingularCovariance | DirichletError::ModeOnBoundary { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AsymptoticsError> for CliError {
    fn from(e: AsymptoticsError) -> Self {
        match e {
            AsymptoticsError::Chain(c) => c.into(),
            AsymptoticsError::Diffusion(d) => d.into(),
            AsymptoticsError::Dirichlet(d) => d.into(),
            AsymptoticsError::BadGrid | AsymptoticsError::DimensionMismatch { .. } | AsymptoticsError::InfeasibleN { .. } => {
                CliError::Validation(e.to_string())
            }
            AsymptoticsError::Pim(p) => CliError::Validation(p.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "asg", version, about = "Sampling probabilities and asymptotics of the typed ancestral selection graph")]
pub struct Cli {
    /// Worker threads for parallel stages (0 = all cores); results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (a directory for simulate-chain).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Parameter file with keys d, theta, P, gamma.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neutral parent-independent mutation with --theta and --q.
    #[arg(long)]
    pub pim: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// PIM mutation target distribution, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    /// Row-major mutation matrix, comma separated.
    #[arg(long = "p", alias = "P", allow_hyphen_values = true)]
    pub p_matrix: Option<String>,
    /// Selection parameters, comma separated (default all zero).
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<String>,
}

impl ParamArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none() && !self.pim && self.theta.is_none() && self.q.is_none() && self.p_matrix.is_none() && self.gamma.is_none()
    }

    /// Like [`ParamArgs::load`], but with no parameter flags at all falls back
    /// to neutral PIM with θ = 2 and uniform q on `d` types.
    pub fn load_or_default(&self, d: usize) -> Result<ModelParams, CliError> {
        if self.is_empty() {
            return Ok(ModelParams::pim(DEFAULT_THETA, &vec![1.0 / d as f64; d])?);
        }
        self.load()
    }

    pub fn load(&self) -> Result<ModelParams, CliError> {
        if let Some(path) = &self.config {
            if self.pim || self.p_matrix.is_some() || self.q.is_some() {
                return Err(CliError::Usage("--config cannot be combined with inline parameters".into()));
            }
            let text = fs::read_to_string(path)?;
            return Ok(parse_params(&text)?);
        }
        let theta = self.theta.ok_or_else(|| CliError::Usage("missing --theta (or --config)".into()))?;
        if self.pim {
            let q = parse_list("q", self.q.as_deref().ok_or_else(|| CliError::Usage("--pim needs --q".into()))?)?;
            if self.gamma.is_some() {
                return Err(CliError::Usage("--pim is neutral; use --p with --gamma for selection".into()));
            }
            return Ok(ModelParams::pim(theta, &q)?);
        }
        let p = parse_list("P", self.p_matrix.as_deref().ok_or_else(|| CliError::Usage("missing --p, --pim or --config".into()))?)?;
        let d = (p.len() as f64).sqrt().round() as usize;
        let gamma = match &self.gamma {
            Some(g) => parse_list("gamma", g)?,
            None => vec![0.0; d],
        };
        Ok(ModelParams::new(d, theta, p, gamma)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClosureArg {
    PimProxy,
    DropBranching,
}

impl From<ClosureArg> for Closure {
    fn from(c: ClosureArg) -> Self {
        match c {
            ClosureArg::PimProxy => Closure::PimProxy,
            ClosureArg::DropBranching => Closure::DropBranching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Truncate,
    Clamp,
}

#[derive(Debug, Clone, Args)]
pub struct DiffusionArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub replicas: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 50.0)]
    pub burn_in: f64,
    #[arg(long, default_value_t = 1.0)]
    pub thinning: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub boundary_eps: f64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Truncate)]
    pub boundary: BoundaryArg,
}

impl DiffusionArgs {
    fn config(&self, seed: u64) -> DiffusionConfig {
        DiffusionConfig {
            dt: self.dt,
            burn_in: self.burn_in,
            thinning: self.thinning,
            boundary_eps: self.boundary_eps,
            boundary: match self.boundary {
                BoundaryArg::Truncate => BoundaryScheme::Truncate,
                BoundaryArg::Clamp => BoundaryScheme::Clamp,
            },
            replicas: self.replicas,
            samples: self.samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckArg {
    TheoremP,
    KOverB,
    PiLimit,
    Transitions,
    Stirling,
    Degree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Pim,
    Recursion,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PtildeArg {
    Auto,
    Dirichlet,
    Kde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Shifted,
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form neutral PIM sampling probabilities.
    Exact {
        #[command(flatten)]
        params: ParamArgs,
        /// Sample configuration, comma separated.
        #[arg(long)]
        n: String,
        #[command(flatten)]
        common: Common,
    },
    /// Probability table from the normalization recursion.
    Solve {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        max_size: u32,
        /// Truncation size under selection (default max-size + 40).
        #[arg(long)]
        n_max: Option<u32>,
        #[arg(long, value_enum, default_value_t = ClosureArg::PimProxy)]
        closure: ClosureArg,
        /// Fail when the truncation error estimate exceeds this.
        #[arg(long)]
        truncation_tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Stationary diffusion samples and Monte Carlo estimates.
    Diffusion {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        /// Estimate p at this configuration (repeatable).
        #[arg(long)]
        estimate_p: Vec<String>,
        /// Estimate the stationary density at this simplex point (repeatable).
        #[arg(long)]
        density_at: Vec<String>,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Also write the raw ensemble to this CSV file.
        #[arg(long)]
        ensemble_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Trajectories of the jump chain down to one lineage.
    SimulateChain {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        start: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: usize,
        /// Table size for non-PIM parameters (default start size + 20).
        #[arg(long)]
        table_size: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Local limit of rescaled Dirichlet densities.
    DirichletLimit {
        /// Limit parameter α (direction y for the shifted rule).
        #[arg(long)]
        alpha: String,
        #[arg(long, value_enum, default_value_t = RuleArg::Shifted)]
        rule: RuleArg,
        /// `a:b` (doubling), `a:b:factor` or a comma list.
        #[arg(long, default_value = "50:3200:4")]
        grid: String,
        #[command(flatten)]
        common: Common,
    },
    /// Convergence reports for the large-sample limits.
    Asymptotics {
        #[arg(long, value_enum)]
        check: CheckArg,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        y: String,
        #[arg(long, default_value = "25:3200")]
        grid: String,
        #[arg(long, value_enum, default_value_t = SourceArg::Pim)]
        source: SourceArg,
        #[arg(long, value_enum, default_value_t = PtildeArg::Auto)]
        ptilde: PtildeArg,
        #[arg(long, default_value_t = 1e-2)]
        tolerance: f64,
        /// Type index (1-based) for pi-limit.
        #[arg(long, default_value_t = 1)]
        i: usize,
        /// Dirichlet draws for the second k-over-b route (0 disables it).
        #[arg(long, default_value_t = 0)]
        draws: usize,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `a:b` (×2 steps), `a:b:factor`, or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse grid {text:?}"));
    let grid: Vec<u64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let a: u64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: u64 = parts.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let f: f64 = match parts.get(2) {
            Some(s) => s.trim().parse().map_err(|_| bad())?,
            None => 2.0,
        };
        if parts.len() > 3 || !(f > 1.0) || a == 0 || a > b {
            return Err(bad());
        }
        geometric_grid(a, b, f)
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad());
    }
    Ok(grid)
}

fn parse_counts(text: &str) -> Result<SampleConfig, CliError> {
    let counts = text
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|_| CliError::Usage(format!("bad count {s:?} in {text:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    SampleConfig::new(counts).map_err(invalid)
}

/// Space-separated counts, safe inside a CSV field.
fn join_counts(n: &SampleConfig) -> String {
    n.counts().iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn check_dim(params: &ModelParams, n: &SampleConfig) -> Result<(), CliError> {
    if n.dim() != params.dim() {
        return Err(invalid(format!("configuration has {} types, model has {}", n.dim(), params.dim())));
    }
    Ok(())
}

/// Destination for one output artifact.
fn sink(out: &Option<PathBuf>, default_name: &str) -> Result<Box<dyn Write>, CliError> {
    let path = match out {
        Some(p) => Some(p.clone()),
        None => std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join(default_name)),
    };
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Ok(Box::new(BufWriter::new(File::create(p)?)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_json(w: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        0 => execute(cli.command),
        t => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| execute(cli.command)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Exact { params, n, common } => cmd_exact(&params, &n, &common),
        Command::Solve { params, max_size, n_max, closure, truncation_tol, common } => {
            cmd_solve(&params, max_size, n_max, closure.into(), truncation_tol, &common)
        }
        Command::Diffusion { params, diffusion, estimate_p, density_at, bandwidth, ensemble_out, common } => {
            cmd_diffusion(&params, &diffusion, &estimate_p, &density_at, bandwidth, ensemble_out.as_deref(), &common)
        }
        Command::SimulateChain { params, start, reps, max_steps, table_size, common } => {
            cmd_simulate_chain(&params, &start, reps, max_steps, table_size, &common)
        }
        Command::DirichletLimit { alpha, rule, grid, common } => cmd_dirichlet_limit(&alpha, rule, &grid, &common),
        Command::Asymptotics { check, params, y, grid, source, ptilde, tolerance, i, draws, diffusion, common } => {
            let opts = AsymptoticsOpts { check, y, grid, source, ptilde, tolerance, i, draws };
            cmd_asymptotics(&params, &opts, &diffusion, &common)
        }
    }
}

fn cmd_exact(params: &ParamArgs, n: &str, common: &Common) -> Result<(), CliError> {
    let model = params.load()?;
    let pp = PimParams::from_model(&model).map_err(invalid)?;
    let n = parse_counts(n)?;
    check_dim(&model, &n)?;
    let lp = pim_log_p(&n, &pp);
    let pis: Vec<f64> = (0..n.dim()).map(|i| pim_pi(i, n.counts(), &pp)).collect();
    let mut w = sink(&common.out, "exact.csv")?;
    match common.format {
        Format::Csv => {
            writeln!(w, "# {}", provenance_line("exact", &model.hash_hex(), None))?;
            let counts: Vec<String> = (1..=n.dim()).map(|i| format!("c{i}")).collect();
            let pi_cols: Vec<String> = (1..=n.dim()).map(|i| format!("pi_{i}")).collect();
            writeln!(w, "{},log_p,p,{}", counts.join(","), pi_cols.join(","))?;
            let c: Vec<String> = n.counts().iter().map(u32::to_string).collect();
            let p: Vec<String> = pis.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{},{},{},{}", c.join(","), fmt_f64(lp), fmt_f64(lp.exp()), p.join(","))?;
        }
        Format::Json => write_json(
            &mut w,
            &serde_json::json!({"params_hash": model.hash_hex(), "n": n.counts(), "log_p": lp, "p": lp.exp(), "pi": pis}),
        )?,
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve(
    params: &ParamArgs,
    max_size: u32,
    n_max: Option<u32>,
    closure: Closure,
    tol: Option<f64>,
    common: &Common,
) -> Result<(), CliError> {
    let model = params.load()?;
    let hash = model.hash_hex();
    let (table, note) = if model.is_neutral() {
        (solve(&model, max_size, None)?, "neutral".to_string())
    } else {
        let mut policy = TruncationPolicy::new(n_max.unwrap_or(max_size + 40), closure);
        if let Some(t) = tol {
            policy = policy.with_tolerance(t);
        }
        let sol = solve_selection_truncated(&model, max_size, &policy)?;
        (sol.table, format!("truncation={} max_error={}", policy.describe(), fmt_f64(sol.max_error)))
    };
    let mut w = sink(&common.out, "table.csv")?;
    match common.format {
        Format::Csv => table.write_csv(&mut w, &format!("{} {note}", provenance_line("solve", &hash, None)))?,
        Format::Json => {
            let rows: Vec<serde_json::Value> =
                table.iter().map(|(c, lp)| serde_json::json!({"n": c.counts(), "log_p": lp})).collect();
            write_json(
                &mut w,
                &serde_json::json!({"params_hash": hash, "note": note, "size_sums": table.size_sums(), "table": rows}),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_diffusion(
    params: &ParamArgs,
    dargs: &DiffusionArgs,
    estimate_p: &[String],
    density_at: &[String],
    bandwidth: Option<f64>,
    ensemble_out: Option<&Path>,
    common: &Common,
) -> Result<(), CliError> {
    let model = params.load()?;
    let targets = estimate_p.iter().map(|s| parse_counts(s)).collect::<Result<Vec<_>, _>>()?;
    for n in &targets {
        check_dim(&model, n)?;
    }
    let points = density_at
        .iter()
        .map(|s| SimplexPoint::normalized(&parse_list("density-at", s)?).map_err(invalid))
        .collect::<Result<Vec<_>, CliError>>()?;
    let ens = stationary_sample(&model, &dargs.config(common.seed))?;
    if let Some(path) = ensemble_out {
        let mut f = BufWriter::new(File::create(path)?);
        ens.write_csv(&mut f)?;
        f.flush()?;
    }
    let mut rows: Vec<(String, String, f64, f64, String)> = Vec::new();
    for n in &targets {
        let e = estimate_log_p(n, &ens)?;
        let flag = if e.high_variance { "high-variance" } else { "" };
        rows.push(("log_p".into(), join_counts(n), e.log_p, e.se, flag.into()));
    }
    if !points.is_empty() {
        let kde = DensityEstimate::new(&ens, bandwidth)?;
        for x in &points {
            let v = kde.evaluate(x)?;
            let coords: Vec<String> = x.coords().iter().map(|&c| fmt_f64(c)).collect();
            rows.push(("density".into(), coords.join(" "), v, f64::NAN, format!("bandwidth={}", fmt_f64(kde.bandwidth()))));
        }
    }
    let mut w = sink(&common.out, "diffusion.csv")?;
    match common.format {
        Format::Csv => {
            writeln!(w, "# {} samples={} failed_replicas={}", provenance_line("diffusion", &model.hash_hex(), Some(common.seed)), ens.len(), ens.failures.len())?;
            writeln!(w, "quantity,at,estimate,se,note")?;
            for (q, at, v, se, note) in &rows {
                writeln!(w, "{q},{at},{},{},{note}", fmt_f64(*v), fmt_f64(*se))?;
            }
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|(q, at, v, se, note)| serde_json::json!({"quantity": q, "at": at, "estimate": v, "se": if se.is_finite() { Some(*se) } else { None }, "note": note}))
                .collect();
            write_json(
                &mut w,
                &serde_json::json!({"params_hash": model.hash_hex(), "seed": common.seed, "samples": ens.len(), "failed_replicas": ens.failures.len(), "estimates": items}),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pi_provider(model: &ModelParams, table_size: u32) -> Result<Box<dyn PiProvider>, CliError> {
    if let Ok(pp) = PimParams::from_model(model) {
        return Ok(Box::new(PimPi(pp)));
    }
    let table: ProbTable = solve(model, table_size, None)?;
    Ok(Box::new(TablePi::new(table)))
}

fn cmd_simulate_chain(
    params: &ParamArgs,
    start: &str,
    reps: usize,
    max_steps: usize,
    table_size: Option<u32>,
    common: &Common,
) -> Result<(), CliError> {
    let model = params.load()?;
    let n0 = parse_counts(start)?;
    check_dim(&model, &n0)?;
    let pi = pi_provider(&model, table_size.unwrap_or(n0.size() as u32 + 20))?;
    let dir = out_dir(&common.out);
    fs::create_dir_all(&dir)?;
    let hash = model.hash_hex();
    let mut summary = Vec::new();
    for r in 0..reps {
        let mut rng = replicate_rng(common.seed, r as u64);
        let mut t = simulate_to_mrca(&n0, &model, pi.as_ref(), &mut rng, max_steps)?;
        t.seed = common.seed;
        let name = format!("trajectory_{r:05}.{}", if common.format == Format::Json { "json" } else { "csv" });
        let mut w = BufWriter::new(File::create(dir.join(&name))?);
        match common.format {
            Format::Csv => t.write_csv(&mut w, &hash)?,
            Format::Json => {
                let states: Vec<&[u32]> = t.states.iter().map(SampleConfig::counts).collect();
                let events: Vec<String> = t.events.iter().map(ToString::to_string).collect();
                write_json(
                    &mut w,
                    &serde_json::json!({"params_hash": hash, "seed": common.seed, "replicate": r, "states": states, "events": events, "truncated": t.truncated}),
                )?;
            }
        }
        w.flush()?;
        summary.push((r, t.steps(), t.truncated, join_counts(t.states.last().expect("non-empty"))));
    }
    let mut w = BufWriter::new(File::create(dir.join("summary.csv"))?);
    writeln!(w, "# {} pi={}", provenance_line("simulate-chain", &hash, Some(common.seed)), pi.name())?;
    writeln!(w, "replicate,steps,truncated,final_state")?;
    for (r, steps, truncated, last) in summary {
        writeln!(w, "{r},{steps},{truncated},{last}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_dirichlet_limit(alpha: &str, rule: RuleArg, grid: &str, common: &Common) -> Result<(), CliError> {
    let a = parse_list("alpha", alpha)?;
    let seq = match rule {
        RuleArg::Shifted => AlphaSequence::shifted(a)?,
        RuleArg::Linear => AlphaSequence::linear(a)?,
    };
    let ns = parse_grid(grid)?;
    let lim = clt_covariance(&seq.limit())?;
    let g = Grid::for_limit(&lim)?;
    let limit = phi_sup_limit(&seq.limit());
    let mut rows = Vec::new();
    for &n in &ns {
        let gap = sup_norm_gap(n, &seq, &g)?;
        let sup = phi_n_sup(n, &seq).unwrap_or(f64::NAN);
        rows.push((n, gap, sup));
    }
    let mut w = sink(&common.out, "dirichlet_limit.csv")?;
    match common.format {
        Format::Csv => {
            writeln!(w, "# {} alpha={alpha} rule={}", provenance_line("dirichlet-limit", "none", None), seq.name())?;
            writeln!(w, "n,sup_gap,phi_n_sup,phi_sup_limit,ratio")?;
            for (n, gap, sup) in &rows {
                writeln!(w, "{n},{},{},{},{}", fmt_f64(gap.gap), fmt_f64(*sup), fmt_f64(limit), fmt_f64(sup / limit))?;
            }
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|(n, gap, sup)| serde_json::json!({"n": n, "sup_gap": gap.gap, "argmax": gap.argmax, "phi_n_sup": if sup.is_finite() { Some(*sup) } else { None }, "ratio": sup / limit}))
                .collect();
            write_json(&mut w, &serde_json::json!({"alpha": seq.limit(), "rule": seq.name(), "phi_sup_limit": limit, "rows": items}))?;
        }
    }
    w.flush()?;
    Ok(())
}

struct AsymptoticsOpts {
    check: CheckArg,
    y: String,
    grid: String,
    source: SourceArg,
    ptilde: PtildeArg,
    tolerance: f64,
    i: usize,
    draws: usize,
}

fn cmd_asymptotics(params: &ParamArgs, o: &AsymptoticsOpts, dargs: &DiffusionArgs, common: &Common) -> Result<(), CliError> {
    let dir = DirectionY::new(parse_list("y", &o.y)?).map_err(invalid)?;
    let model = params.load_or_default(dir.dim())?;
    let hash = model.hash_hex();
    if dir.dim() != model.dim() {
        return Err(invalid(format!("y has {} components, model has {} types", dir.dim(), model.dim())));
    }
    let grid = parse_grid(&o.grid)?;
    let top = *grid.last().expect("non-empty grid");
    let table_size = || dir.lattice(top).size() as u32 + 2;
    let pim = PimParams::from_model(&model).ok();
    let need_pim = || pim.clone().ok_or_else(|| invalid("this source needs neutral parent-independent mutation"));

    let ensemble = || -> Result<Arc<_>, CliError> { Ok(Arc::new(stationary_sample(&model, &dargs.config(common.seed))?)) };
    let p_source = || -> Result<PSource, CliError> {
        Ok(match o.source {
            SourceArg::Pim => PSource::Pim(need_pim()?),
            SourceArg::Recursion => PSource::Table(Arc::new(solve(&model, table_size(), None)?)),
            SourceArg::Mc => PSource::Mc(ensemble()?),
        })
    };
    let ptilde = |p: &PSource| -> Result<PtildeSource, CliError> {
        let kde = |p: &PSource| -> Result<PtildeSource, CliError> {
            let ens = match p {
                PSource::Mc(e) => e.clone(),
                _ => ensemble()?,
            };
            Ok(PtildeSource::Kde(Arc::new(DensityEstimate::new(&ens, None)?)))
        };
        match (o.ptilde, &pim) {
            (PtildeArg::Dirichlet, Some(pp)) | (PtildeArg::Auto, Some(pp)) => Ok(PtildeSource::Dirichlet(pp.alpha())),
            (PtildeArg::Dirichlet, None) => Err(invalid("closed-form stationary density needs neutral PIM")),
            _ => kde(p),
        }
    };
    let provider = || -> Result<Box<dyn PiProvider>, CliError> {
        Ok(match o.source {
            SourceArg::Pim => Box::new(PimPi(need_pim()?)),
            SourceArg::Recursion => Box::new(TablePi::new(if model.is_neutral() {
                solve(&model, table_size(), None)?
            } else {
                solve_selection_truncated(&model, table_size(), &TruncationPolicy::new(table_size() + 40, Closure::PimProxy))?.table
            })),
            SourceArg::Mc => Box::new(crate::chain::McPi(ensemble()?)),
        })
    };

    let mut reports: Vec<ConvergenceReport> = Vec::new();
    let mut extra = serde_json::Map::new();
    let mut w = sink(&common.out, "asymptotics.csv")?;
    match o.check {
        CheckArg::TheoremP => {
            let p = p_source()?;
            reports.push(check_theorem_p(&dir, &grid, &p, &ptilde(&p)?, o.tolerance)?);
        }
        CheckArg::KOverB => {
            let p = p_source()?;
            let r = check_k_over_b(&dir, &grid, &p, &ptilde(&p)?, o.tolerance, o.draws, common.seed)?;
            reports.push(r.direct);
            reports.extend(r.dirichlet);
        }
        CheckArg::PiLimit => {
            if o.i == 0 || o.i > model.dim() {
                return Err(invalid(format!("--i must lie in 1..={}", model.dim())));
            }
            reports.push(check_pi_limit(o.i - 1, &dir, &grid, provider()?.as_ref(), o.tolerance)?);
        }
        CheckArg::Transitions => {
            reports.extend(check_transition_limits(&dir, &model, &grid, provider()?.as_ref(), o.tolerance)?);
        }
        CheckArg::Degree => {
            let slope = degree_fit(&dir, &grid, &p_source()?)?;
            let expect = 1.0 - model.dim() as f64;
            let pass = (slope - expect).abs() <= 0.05;
            extra.insert("slope".into(), slope.into());
            extra.insert("expected_slope".into(), expect.into());
            extra.insert("pass".into(), pass.into());
            match common.format {
                Format::Csv => {
                    writeln!(w, "# {}", provenance_line("asymptotics", &hash, Some(common.seed)))?;
                    writeln!(w, "slope,expected,abs_err")?;
                    writeln!(w, "{},{},{}", fmt_f64(slope), fmt_f64(expect), fmt_f64((slope - expect).abs()))?;
                }
                Format::Json => write_json(&mut w, &serde_json::Value::Object(extra.clone()))?,
            }
        }
        CheckArg::Stirling => {
            let rows = stirling_chain_report(&grid, &need_pim()?, &dir)?;
            match common.format {
                Format::Csv => write_stirling_csv(&rows, &mut w, &hash)?,
                Format::Json => write_json(&mut w, &serde_json::to_value(&rows).map_err(|e| CliError::Io(e.into()))?)?,
            }
        }
    }
    if !reports.is_empty() {
        match common.format {
            Format::Csv => {
                for r in &reports {
                    r.write_csv(&mut w, &hash, Some(common.seed))?;
                }
            }
            Format::Json => write_json(&mut w, &serde_json::to_value(&reports).map_err(|e| CliError::Io(e.into()))?)?,
        }
        let verdict = serde_json::json!({
            "check": format!("{:?}", o.check),
            "params_hash": hash,
            "seed": common.seed,
            "pass": reports.iter().all(|r| r.pass),
            "reports": reports.iter().map(ConvergenceReport::verdict_json).collect::<Vec<_>>(),
        });
        match verdict_path(&common.out) {
            Some(p) => {
                let mut f = BufWriter::new(File::create(p)?);
                write_json(&mut f, &verdict)?;
                f.flush()?;
            }
            None => write_json(&mut w, &verdict)?,
        }
    }
    w.flush()?;
    Ok(())
}

fn verdict_path(out: &Option<PathBuf>) -> Option<PathBuf> {
    match out {
        Some(p) => Some(p.with_extension("verdict.json")),
        None => std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join("asymptotics.verdict.json")),
    }
}

/// Reads a table written by `solve`.
pub fn read_table(path: &Path) -> Result<ProbTable, CliError> {
    ProbTable::read_csv(BufReader::new(File::open(path)?)).map_err(invalid)
}
