//! `slowdown`: solve, sweep and search routing games with slowdown signals.
//!
//! Exit status is 0 on success, 1 on invalid input and 2 when a solve does
//! not converge (or a saved flow fails verification).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use slowdown_core::analysis::{
    AnalysisError, FamilyKind, Interval, ParameterRanges, SearchStrategy, WitnessFamily,
};
use slowdown_core::equilibrium::{DeviationReport, EquilibriumError, EquilibriumResult};
use slowdown_core::io::{
    builtin_instance_with, parse_instance_with_cap, run_sweep, run_witness_search, sweep_csv, sweep_json,
    BuiltinParams, GammaSpec, Instance, InstanceDocument, IoError,
};
use slowdown_core::{
    solve_nash, solve_optimum, verify_nash, CostMode, FlowAssignment, PerceivedCostContext, RoutingProblem,
    SensitivityProfile, Signal, SolverConfig,
};

#[derive(Parser)]
#[command(name = "slowdown", version, about = "Routing games with slowdown-sensitive commuters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nash flow of one instance at one signal.
    Solve(SolveArgs),
    /// Flow minimizing total latency.
    Optimum(OptimumArgs),
    /// Latency, price of anarchy and perversity over a range of signals.
    Sweep(SweepArgs),
    /// Search an instance family for a signal that raises equilibrium latency.
    Search(SearchArgs),
    /// Check that a saved flow is an equilibrium.
    Verify(VerifyArgs),
    /// Print a canonical instance as a document.
    Builtin(BuiltinArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance document (JSON).
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    instance: Option<PathBuf>,
    /// Canonical instance: pigou, pigou-d, braess, two-class-two-link, k-link-uniform.
    #[arg(long)]
    builtin: Option<String>,
    #[command(flatten)]
    params: ParamArgs,
    /// Path enumeration cap for documents without explicit paths.
    #[arg(long, default_value_t = 64)]
    paths_cap: usize,
}

#[derive(Args)]
struct ParamArgs {
    /// Latency degree for pigou-d and k-link-uniform.
    #[arg(long)]
    degree: Option<u32>,
    /// Link count for k-link-uniform.
    #[arg(long)]
    links: Option<usize>,
    /// Comma-separated class sensitivities; the rate is split evenly.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
}

impl ParamArgs {
    fn to_params(&self) -> BuiltinParams {
        BuiltinParams { degree: self.degree, links: self.links, betas: self.betas.clone() }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Target relative duality gap.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut config = SolverConfig::default().with_tolerance(self.tol).with_max_iterations(self.max_iters);
        config.seed = self.seed;
        config
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Slowdown,
    EmulatedAltruism,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Signal; defaults to the document's gamma, else 0.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Slowdown)]
    mode: Mode,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OptimumArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Single signal.
    #[arg(long, conflicts_with = "gamma_range", required_unless_present = "gamma_range")]
    gamma: Option<f64>,
    /// Signals `LO:HI:STEP`, both ends included.
    #[arg(long)]
    gamma_range: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyName {
    TwoLinkParallel,
    KLinkParallel,
    Braess,
}

#[derive(Args)]
struct SearchArgs {
    /// Family description (JSON); overrides the family flags below.
    #[arg(long)]
    family_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FamilyName::TwoLinkParallel)]
    family: FamilyName,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    /// Extra candidates spent perturbing the incumbent.
    #[arg(long, default_value_t = 0)]
    refinement: usize,
    /// Use a lattice with this many points per coordinate instead of random draws.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value_t = 1)]
    degree: u32,
    #[arg(long, default_value_t = 1)]
    min_classes: usize,
    #[arg(long, default_value_t = 3)]
    max_classes: usize,
    #[arg(long, default_value_t = 2)]
    min_links: usize,
    #[arg(long, default_value_t = 4)]
    max_links: usize,
    /// Add a `v -> t` commodity to the Braess family.
    #[arg(long)]
    cross_traffic: bool,
    /// Coefficient ranges `LO:HI`.
    #[arg(long, default_value = "0:2")]
    a_range: String,
    #[arg(long, default_value = "0:2")]
    b_range: String,
    #[arg(long, default_value = "0:2")]
    rate_range: String,
    #[arg(long, default_value = "0:1")]
    beta_range: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Output of `solve --format json`, or a bare flow `[commodity][class][path]`.
    #[arg(long)]
    flow: PathBuf,
    /// Signal; defaults to the one recorded in the flow file, else 0.
    #[arg(long)]
    gamma: Option<f64>,
    /// Allowed cost excess on used paths; defaults to the solve's certified accuracy, else 1e-6.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Slowdown)]
    mode: Mode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuiltinArgs {
    name: String,
    #[command(flatten)]
    params: ParamArgs,
    /// Record this signal in the document.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl fmt::Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }

    fn solver(message: impl fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::NotConverged { .. } => CliError::solver(e),
            other => CliError::input(other),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Equilibrium(inner) => inner.into(),
            AnalysisError::NoCandidates { .. } => CliError::solver(e),
            other => CliError::input(other),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Equilibrium(inner) => inner.into(),
            IoError::Analysis(inner) => inner.into(),
            other => CliError::input(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Optimum(args) => optimum(args),
        Command::Sweep(args) => sweep(args),
        Command::Search(args) => search(args),
        Command::Verify(args) => verify(args),
        Command::Builtin(args) => builtin(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Loads the instance and the signal recorded in its document, if any.
fn load(args: &InstanceArgs) -> CliResult<(Instance, Option<f64>)> {
    if let Some(name) = &args.builtin {
        return Ok((builtin_instance_with(name, &args.params.to_params()).map_err(CliError::input)?, None));
    }
    let path = args.instance.as_ref().expect("clap requires an instance source");
    let text = read(path)?;
    let gamma = slowdown_core::io::parse_document(&text)?.gamma;
    Ok((parse_instance_with_cap(&text, args.paths_cap)?, gamma))
}

fn read(path: &PathBuf) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn cost_mode(mode: Mode) -> CostMode {
    match mode {
        Mode::Slowdown => CostMode::Slowdown,
        Mode::EmulatedAltruism => CostMode::EmulatedAltruism,
    }
}

fn edge_list(problem: &RoutingProblem, c: usize, p: usize) -> String {
    problem.commodities[c].paths[p].edges().iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct SolveReport {
    instance: String,
    gamma: f64,
    mode: CostMode,
    edge_flows: Vec<f64>,
    result: EquilibriumResult,
}

/// Keeps the best iterate of an unconverged solve so it can still be reported.
fn keep_unconverged(outcome: Result<EquilibriumResult, EquilibriumError>) -> CliResult<EquilibriumResult> {
    match outcome {
        Ok(r) => Ok(r),
        Err(EquilibriumError::NotConverged { result, .. }) => Ok(*result),
        Err(e) => Err(e.into()),
    }
}

fn converged_or_exit(result: &EquilibriumResult, tol: f64) -> CliResult {
    if result.converged {
        Ok(())
    } else {
        Err(CliError::solver(format!(
            "solver did not reach relative gap {tol:e} (best {:e} after {} iterations)",
            result.relative_gap, result.iterations
        )))
    }
}

fn solve(args: SolveArgs) -> CliResult {
    let ((problem, profile), doc_gamma) = load(&args.instance)?;
    let gamma = args.gamma.or(doc_gamma).unwrap_or(0.0);
    let signal = Signal::new(gamma).map_err(CliError::input)?;
    let mode = cost_mode(args.mode);
    let ctx = PerceivedCostContext::new(&problem, &profile, signal, mode)?;
    let config = args.solver.config();
    let result = keep_unconverged(solve_nash(&ctx, &config))?;
    let edge_flows = result.flow.edge_flows(&problem);
    let text = match args.output.format {
        Format::Json => json(&SolveReport { instance: problem.name.clone(), gamma, mode, edge_flows, result: result.clone() }),
        Format::Csv => {
            let mut out = String::from("commodity,class,beta,path,edges,flow,perceived_cost\n");
            for (c, classes) in result.flow.class_flows().iter().enumerate() {
                for (k, flows) in classes.iter().enumerate() {
                    let beta = profile.classes(c)[k].beta;
                    for (p, f) in flows.iter().enumerate() {
                        let cost = ctx.perceived_cost(c, k, &problem.commodities[c].paths[p], &edge_flows);
                        out.push_str(&format!("{c},{k},{beta},{p},{},{f},{cost}\n", edge_list(&problem, c, p)));
                    }
                }
            }
            out
        }
    };
    emit(&args.output.out, &text)?;
    converged_or_exit(&result, config.tolerance)
}

#[derive(Serialize)]
struct OptimumReport {
    instance: String,
    edge_flows: Vec<f64>,
    result: EquilibriumResult,
}

fn optimum(args: OptimumArgs) -> CliResult {
    let ((problem, _), _) = load(&args.instance)?;
    let config = args.solver.config();
    let result = keep_unconverged(solve_optimum(&problem, &config))?;
    let edge_flows = result.flow.edge_flows(&problem);
    let text = match args.output.format {
        Format::Json => json(&OptimumReport { instance: problem.name.clone(), edge_flows, result: result.clone() }),
        Format::Csv => {
            let mut out = String::from("commodity,path,edges,flow\n");
            for c in 0..problem.commodities.len() {
                for (p, f) in result.flow.path_flows(c).iter().enumerate() {
                    out.push_str(&format!("{c},{p},{},{f}\n", edge_list(&problem, c, p)));
                }
            }
            out
        }
    };
    emit(&args.output.out, &text)?;
    converged_or_exit(&result, config.tolerance)
}

fn parse_range(text: &str, parts: usize) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("bad range {text:?}: {e}")))?;
    if values.len() != parts {
        return Err(CliError::input(format!("bad range {text:?}: expected {parts} values separated by ':'")));
    }
    Ok(values)
}

fn sweep(args: SweepArgs) -> CliResult {
    let ((problem, profile), _) = load(&args.instance)?;
    let spec = match (&args.gamma_range, args.gamma) {
        (Some(range), _) => {
            let v = parse_range(range, 3)?;
            GammaSpec::Range { lo: v[0], hi: v[1], step: v[2] }
        }
        (None, Some(g)) => GammaSpec::List(vec![g]),
        (None, None) => unreachable!("clap requires a signal"),
    };
    let rows = run_sweep(&problem, &profile, &spec.values()?, &args.solver.config())?;
    let text = match args.output.format {
        Format::Csv => sweep_csv(&rows),
        Format::Json => sweep_json(&rows) + "\n",
    };
    emit(&args.output.out, &text)?;
    match rows.iter().filter(|r| !r.converged).count() {
        0 => Ok(()),
        n => Err(CliError::solver(format!("{n} of {} rows did not converge", rows.len()))),
    }
}

fn family_from_flags(args: &SearchArgs) -> CliResult<WitnessFamily> {
    let interval = |text: &str| -> CliResult<Interval> {
        let v = parse_range(text, 2)?;
        Ok(Interval::new(v[0], v[1]))
    };
    let kind = match args.family {
        FamilyName::TwoLinkParallel => FamilyKind::TwoLinkParallel,
        FamilyName::KLinkParallel => FamilyKind::KLinkParallel { min_links: args.min_links, max_links: args.max_links },
        FamilyName::Braess => FamilyKind::Braess { cross_traffic: args.cross_traffic },
    };
    let ranges = ParameterRanges {
        a: interval(&args.a_range)?,
        b: interval(&args.b_range)?,
        rate: interval(&args.rate_range)?,
        beta: interval(&args.beta_range)?,
        min_classes: args.min_classes,
        max_classes: args.max_classes,
        degree: args.degree,
    };
    let strategy = match args.grid_points {
        Some(points_per_axis) => SearchStrategy::Grid { points_per_axis },
        None => SearchStrategy::Random,
    };
    Ok(WitnessFamily::new(kind, ranges)
        .with_strategy(strategy)
        .with_budget(args.budget)
        .with_seed(args.solver.seed)
        .with_refinement(args.refinement))
}

fn search(args: SearchArgs) -> CliResult {
    let family = match &args.family_config {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        None => family_from_flags(&args)?,
    };
    let doc = run_witness_search(&family, args.gamma, &args.solver.config(), args.workers)?;
    let text = match args.output.format {
        Format::Json => json(&doc),
        Format::Csv => format!(
            "gamma,ratio,L_nf_gamma,L_nf_zero,witness_index,evaluated,failed,perverse\n{},{},{},{},{},{},{},{}\n",
            doc.gamma,
            doc.record.ratio,
            doc.record.l_nf_gamma,
            doc.record.l_nf_zero,
            doc.witness_index,
            doc.trace.evaluated,
            doc.trace.failed,
            doc.trace.perverse
        ),
    };
    emit(&args.output.out, &text)
}

#[derive(Serialize)]
struct VerifyReport {
    gamma: f64,
    equilibrium: bool,
    report: DeviationReport,
}

fn verify(args: VerifyArgs) -> CliResult {
    let ((problem, profile), doc_gamma) = load(&args.instance)?;
    let saved: serde_json::Value =
        serde_json::from_str(&read(&args.flow)?).map_err(|e| CliError::input(format!("{}: {e}", args.flow.display())))?;
    let (flow_value, saved_gamma, saved_eps) = match saved.get("result") {
        Some(result) => {
            let result: EquilibriumResult =
                serde_json::from_value(result.clone()).map_err(|e| CliError::input(format!("flow file: {e}")))?;
            (serde_json::to_value(&result.flow).unwrap(), saved.get("gamma").and_then(|g| g.as_f64()), Some(result.wardrop_epsilon()))
        }
        None => (saved, None, None),
    };
    let flow: FlowAssignment =
        serde_json::from_value(flow_value).map_err(|e| CliError::input(format!("flow file: {e}")))?;
    let gamma = args.gamma.or(saved_gamma).or(doc_gamma).unwrap_or(0.0);
    let eps = args.eps.or(saved_eps).unwrap_or(1e-6);
    let ctx = PerceivedCostContext::new(&problem, &profile, Signal::new(gamma).map_err(CliError::input)?, cost_mode(args.mode))?;
    let report = verify_nash(&ctx, &flow, eps)?;
    let equilibrium = report.is_empty();
    emit(&args.out, &json(&VerifyReport { gamma, equilibrium, report }))?;
    if equilibrium {
        Ok(())
    } else {
        Err(CliError::solver("flow is not an equilibrium"))
    }
}

fn builtin(args: BuiltinArgs) -> CliResult {
    let (problem, profile): (RoutingProblem, SensitivityProfile) =
        builtin_instance_with(&args.name, &args.params.to_params()).map_err(CliError::input)?;
    if let Some(g) = args.gamma {
        Signal::new(g).map_err(CliError::input)?;
    }
    emit(&args.out, &(InstanceDocument::from_instance(&problem, &profile, args.gamma).to_json() + "\n"))
}
