//! Command-line front end: `solve`, `frontier`, `gaps`, `oracle`.
//!
//! Exit codes: 0 ok, 1 input error, 2 infeasible, 3 oracle guard.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, Market, Method, ReferenceBudget, SweepConfig, UefCurve};
use crate::dataio::{self, Metadata, ReportDocument, SolutionRecord};
use crate::exact::{self, Budget, ExactError, ExactResult};
use crate::heuristic::{self, GaConfig, PipelineConfig, PoolConfig, VnsConfig};
use crate::model::{build_from_mv, validate, MvSpec, ProblemInstance, WeightedSolution};
use crate::relax::DualAscentParams;

pub const SHIFT_POLICY: &str =
    "diagonal shift to 2e-10 when the smallest covariance eigenvalue lies in (-1e-8, 1e-10]";

#[derive(Debug, Parser)]
#[command(name = "miqp-hybrid", version, about = "Cardinality-constrained mean-variance solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline at one target return.
    Solve(SolveArgs),
    /// Sweep target returns across the frontier and report percentage errors.
    Frontier(SweepArgs),
    /// Sweep with exact references and report binary and objective gaps.
    Gaps(GapsArgs),
    /// Solve one target exactly.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Asset file in the benchmark `port` format.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Number of assets to select.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Minimum weight of a selected asset.
    #[arg(long, default_value_t = 0.01)]
    pub lower: f64,
    /// Maximum weight of a selected asset.
    #[arg(long, default_value_t = 1.0)]
    pub upper: f64,
    /// Penalty weight of the augmented relaxation.
    #[arg(long = "lambda-g", default_value_t = 1e-7)]
    pub lambda_g: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Does not affect results.
    #[serde(skip)]
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output file (json) or directory (csv); json goes to stdout if unset.
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long = "m-random", default_value_t = 100)]
    pub m_random: usize,
    #[arg(long, default_value_t = 10)]
    pub perturbations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub retain: f64,
    #[arg(long, default_value_t = 0.1)]
    pub mutation: f64,
    #[arg(long, default_value_t = 0.01)]
    pub spread: f64,
    #[arg(long = "max-gen", default_value_t = 200)]
    pub max_generations: usize,
    #[arg(long = "vns-limit", default_value_t = 100)]
    pub vns_limit: usize,
    #[arg(long = "dual-iters", default_value_t = 500)]
    pub dual_iters: usize,
    #[arg(long = "dual-step", default_value_t = 1.0)]
    pub dual_step: f64,
    #[arg(long = "dual-penalty", default_value_t = 10.0)]
    pub dual_penalty: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Target portfolio return.
    #[arg(long = "return")]
    pub target_return: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Frontier file of `return variance` lines.
    #[arg(long)]
    pub uef: Option<PathBuf>,
    /// The frontier file lists `variance return`.
    #[arg(long = "uef-swap")]
    pub uef_swap: bool,
    /// Compute the frontier at this many points instead of reading --uef.
    #[arg(long = "uef-generate")]
    pub uef_generate: Option<usize>,
    /// Number of target returns.
    #[arg(long, default_value_t = 50)]
    pub sweep: usize,
    /// Comma-separated subset of line,dual,augm,ours,exact.
    #[arg(long, value_delimiter = ',', default_value = "line,dual,augm,ours")]
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
    /// Branch-and-bound node budget per target.
    #[arg(long, default_value_t = 1_000_000)]
    pub nodes: usize,
    /// Branch-and-bound time budget per target, in seconds.
    #[arg(long = "time-s")]
    pub time_s: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long = "return")]
    pub target_return: f64,
    /// Node budget; with either budget set, branch and bound replaces
    /// enumeration.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long = "time-s")]
    pub time_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("oracle guard: {0}")]
    OracleGuard(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::OracleGuard(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(ctx: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{ctx}: {e}"))
}

struct Loaded {
    market: Market,
    metadata: Metadata,
}

fn load_dataset(command: &str, common: &CommonArgs, config: serde_json::Value) -> Result<Loaded, CliError> {
    let path = &common.dataset;
    let text = fs::read_to_string(path).map_err(input(&path.display().to_string()))?;
    let parsed = dataio::parse_port(&text).map_err(input(&path.display().to_string()))?;
    let cov = dataio::covariance(&parsed.value).map_err(input("covariance"))?;
    let mut warnings = parsed.warnings;
    if let Some(s) = cov.shift {
        warnings.push(format!("covariance diagonal shifted by {}", dataio::format_f64(s)));
    }
    let metadata = Metadata {
        command: command.into(),
        dataset: path.display().to_string(),
        seed: common.seed,
        config,
        covariance_min_eigenvalue: Some(cov.min_eigenvalue),
        covariance_shift: cov.shift,
        shift_policy: SHIFT_POLICY.into(),
        returns_convention: "as-published".into(),
        warnings,
    };
    Ok(Loaded {
        market: Market {
            q: cov.q,
            returns: parsed.value.mean_returns,
        },
        metadata,
    })
}

fn pipeline_config(c: &CommonArgs) -> PipelineConfig {
    let seeded = PipelineConfig::with_seed(c.seed);
    PipelineConfig {
        pool: PoolConfig {
            m_random: c.m_random,
            perturbations_per_relax: c.perturbations,
            seed: seeded.pool.seed,
        },
        ga: GaConfig {
            retain_fraction: c.retain,
            mutation_prob: c.mutation,
            spread_threshold: c.spread,
            max_generations: c.max_generations,
        },
        vns: VnsConfig {
            max_non_improving: c.vns_limit,
            seed: seeded.vns.seed,
        },
        dual: DualAscentParams {
            max_iters: c.dual_iters,
            step0: c.dual_step,
            penalty_weight: c.dual_penalty,
            seed: seeded.dual.seed,
        },
        lambda_g: c.lambda_g,
        ga_seed: seeded.ga_seed,
    }
}

fn check_common(c: &CommonArgs) -> Result<(), CliError> {
    let bad = |m: String| Err(CliError::Input(m));
    if !(c.lower >= 0.0 && c.upper > 0.0 && c.lower <= c.upper) {
        return bad(format!("bounds need 0 <= lower <= upper, upper > 0 (got {}, {})", c.lower, c.upper));
    }
    if !(c.lambda_g >= 0.0) {
        return bad(format!("lambda-g must be nonnegative (got {})", c.lambda_g));
    }
    if c.vns_limit == 0 || c.dual_iters == 0 || !(c.dual_step > 0.0) || !(c.dual_penalty >= 0.0) {
        return bad("vns-limit and dual-iters must be >= 1, dual-step > 0, dual-penalty >= 0".into());
    }
    pipeline_config(c).ga.check().map_err(input("ga"))
}

fn instance(market: &Market, c: &CommonArgs, target: f64) -> Result<ProblemInstance, CliError> {
    let spec = MvSpec {
        returns: market.returns.clone(),
        target_return: target,
        k: c.k,
        lower: c.lower,
        upper: c.upper,
    };
    let inst = build_from_mv(&spec, &market.q).map_err(input("instance"))?;
    let diags = validate(&inst);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(CliError::Input(msg.join("; ")));
    }
    Ok(inst)
}

fn echo<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("config echo")
}

fn solution_record(method: Method, target: f64, sol: &WeightedSolution) -> SolutionRecord {
    let ok = sol.is_optimal();
    SolutionRecord {
        method,
        target_return: target,
        status: if ok { "optimal" } else { "infeasible" }.into(),
        objective: ok.then_some(sol.objective),
        selection: sol.selection.to_bit_string(),
        weights: sol.x.iter().copied().collect(),
        proved_optimal: None,
        nodes_explored: None,
        budget_hit: None,
        bounds: BTreeMap::new(),
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<ReportDocument, CliError> {
    check_common(&a.common)?;
    let loaded = load_dataset("solve", &a.common, echo(a))?;
    let inst = instance(&loaded.market, &a.common, a.target_return)?;
    let out = heuristic::solve_pipeline(&inst, &pipeline_config(&a.common))
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    let mut rec = solution_record(Method::Ours, a.target_return, &out.solution);
    for r in &out.relaxations {
        rec.bounds.insert(format!("{:?}", r.kind).to_lowercase(), r.bound);
    }
    let mut doc = ReportDocument::new(loaded.metadata);
    for (kind, e) in &out.relaxation_errors {
        doc.metadata.warnings.push(format!("{kind:?} relaxation failed: {e}"));
    }
    doc.solutions.push(rec);
    Ok(doc)
}

fn load_uef(a: &SweepArgs, market: &Market) -> Result<(UefCurve, Vec<String>), CliError> {
    match (&a.uef, a.uef_generate) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(input(&path.display().to_string()))?;
            let p = dataio::parse_uef(&text, a.uef_swap).map_err(input(&path.display().to_string()))?;
            Ok((p.value, p.warnings))
        }
        (None, Some(count)) if count >= 1 => {
            let curve = analysis::unconstrained_frontier(&market.q, &market.returns, count)
                .map_err(input("frontier generation"))?;
            Ok((curve, vec![format!("frontier computed at {count} points")]))
        }
        _ => Err(CliError::Input("a frontier is required: pass --uef or --uef-generate".into())),
    }
}

fn sweep(
    command: &str,
    a: &SweepArgs,
    reference: Option<ReferenceBudget>,
    config: serde_json::Value,
) -> Result<ReportDocument, CliError> {
    check_common(&a.common)?;
    if a.methods.is_empty() {
        return Err(CliError::Input("no methods selected".into()));
    }
    let loaded = load_dataset(command, &a.common, config)?;
    let (uef, uef_warnings) = load_uef(a, &loaded.market)?;
    let mut methods = a.methods.clone();
    methods.sort();
    methods.dedup();
    let cfg = SweepConfig {
        k: a.common.k,
        lower: a.common.lower,
        upper: a.common.upper,
        count: a.sweep,
        methods,
        pipeline: pipeline_config(&a.common),
        seed: a.common.seed,
        reference,
    };
    if a.common.k > loaded.market.returns.len() {
        return Err(CliError::Input(format!(
            "k = {} exceeds the {} assets",
            a.common.k,
            loaded.market.returns.len()
        )));
    }
    let out = analysis::sweep_frontier(&loaded.market, &uef, &cfg).map_err(input("sweep"))?;
    let mut doc = ReportDocument::new(loaded.metadata);
    doc.metadata.warnings.extend(uef_warnings);
    doc.frontier = out.frontier;
    doc.percentage_errors = out.percentage_errors;
    doc.references = out.references;
    doc.gaps = out.gaps;
    doc.aggregates = out.aggregates;
    Ok(doc)
}

fn cmd_oracle(a: &OracleArgs) -> Result<ReportDocument, CliError> {
    check_common(&a.common)?;
    let loaded = load_dataset("oracle", &a.common, echo(a))?;
    let inst = instance(&loaded.market, &a.common, a.target_return)?;
    let result: ExactResult = if a.nodes.is_none() && a.time_s.is_none() {
        exact::brute_force(&inst).map_err(|e| match e {
            ExactError::TooLarge(_) => CliError::OracleGuard(format!("{e}; set --nodes or --time-s")),
            other => CliError::Input(other.to_string()),
        })?
    } else {
        let budget = Budget {
            nodes: a.nodes.unwrap_or(usize::MAX),
            time: a.time_s.map(Duration::from_secs_f64),
        };
        exact::branch_and_bound(&inst, budget).map_err(input("oracle"))?
    };
    if !result.solution.is_optimal() && result.proved_optimal {
        return Err(CliError::Infeasible("no selection admits a feasible portfolio".into()));
    }
    let mut rec = solution_record(Method::Exact, a.target_return, &result.solution);
    rec.proved_optimal = Some(result.proved_optimal);
    rec.nodes_explored = Some(result.nodes_explored);
    rec.budget_hit = Some(result.node_budget_hit || result.wall_budget_hit);
    let mut doc = ReportDocument::new(loaded.metadata);
    doc.solutions.push(rec);
    Ok(doc)
}

/// Runs a parsed command and returns its report.
pub fn run(cli: &Cli) -> Result<ReportDocument, CliError> {
    let jobs = match &cli.command {
        Command::Solve(a) => a.common.jobs,
        Command::Frontier(a) => a.common.jobs,
        Command::Gaps(a) => a.sweep.common.jobs,
        Command::Oracle(a) => a.common.jobs,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(input("thread pool"))?;
    pool.install(|| match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Frontier(a) => sweep("frontier", a, None, echo(a)),
        Command::Gaps(a) => {
            let budget = ReferenceBudget {
                nodes: a.nodes,
                time_s: a.time_s,
            };
            sweep("gaps", &a.sweep, Some(budget), echo(a))
        }
        Command::Oracle(a) => cmd_oracle(a),
    })
}

fn common(cli: &Cli) -> &CommonArgs {
    match &cli.command {
        Command::Solve(a) => &a.common,
        Command::Frontier(a) => &a.common,
        Command::Gaps(a) => &a.sweep.common,
        Command::Oracle(a) => &a.common,
    }
}

/// Writes the report to `--out` (file for json, directory for csv).
/// Returns the bytes for stdout when no output path is given.
pub fn emit(doc: &ReportDocument, format: Format, out: Option<&Path>) -> Result<Vec<u8>, CliError> {
    match (format, out) {
        (Format::Json, None) => Ok(dataio::write_json(doc)),
        (Format::Json, Some(path)) => {
            fs::write(path, dataio::write_json(doc)).map_err(input(&path.display().to_string()))?;
            Ok(Vec::new())
        }
        (Format::Csv, None) => Err(CliError::Input("--format csv needs --out <directory>".into())),
        (Format::Csv, Some(dir)) => {
            fs::create_dir_all(dir).map_err(input(&dir.display().to_string()))?;
            for (name, bytes) in dataio::write_csv(doc) {
                let path = dir.join(name);
                fs::write(&path, bytes).map_err(input(&path.display().to_string()))?;
            }
            Ok(Vec::new())
        }
    }
}

/// Parses `args`, runs the command, and returns `(exit code, stdout bytes,
/// stderr text)`.
pub fn execute<I, T>(args: I) -> (i32, Vec<u8>, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 {
                (0, text.into_bytes(), String::new())
            } else {
                (1, Vec::new(), text)
            };
        }
    };
    let c = common(&cli);
    if c.format == Format::Csv && c.out.is_none() {
        return (1, Vec::new(), "--format csv needs --out <directory>\n".into());
    }
    match run(&cli).and_then(|doc| emit(&doc, c.format, c.out.as_deref())) {
        Ok(bytes) => (0, bytes, String::new()),
        Err(e) => (e.exit_code(), Vec::new(), format!("error: {e}\n")),
    }
}
