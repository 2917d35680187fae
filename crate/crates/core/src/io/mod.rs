//! Instance documents, sweep execution and witness-search reports.

pub mod builtin;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{search_perverse_witness, AnalysisError, PerversityRecord, TraceSummary, WitnessFamily};
use crate::equilibrium::{solve_nash, solve_optimum, EquilibriumError, EquilibriumResult, PerceivedCostContext, SolverConfig};
use crate::network::{enumerate_paths, Commodity, Edge, Latency, Path, RoutingProblem, DEFAULT_PATH_CAP};
use crate::population::{SensitivityClass, SensitivityProfile};

pub use builtin::{builtin_instance, builtin_instance_with, BuiltinError, BuiltinParams, Instance, BUILTIN_NAMES};

pub const SCHEMA_VERSION: u32 = 1;

pub const SWEEP_HEADER: &str = "gamma,L_nf,L_opt,poa_ratio,perversity_ratio,converged,relative_gap,iterations";

#[derive(Debug, Error)]
pub enum IoError {
    /// Malformed text; the message carries serde's line and column.
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Builtin(#[from] BuiltinError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

impl IoError {
    fn invalid(msg: impl Into<String>) -> Self {
        IoError::Validation(vec![msg.into()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDocument {
    pub tail: String,
    pub head: String,
    pub a: f64,
    pub d: u32,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDocument {
    pub beta: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommodityDocument {
    pub source: String,
    pub sink: String,
    pub rate: f64,
    pub classes: Vec<ClassDocument>,
    /// Paths as lists of edge indices; enumerated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Vec<usize>>>,
}

/// Self-contained text form of a routing problem, its population and
/// optionally a signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub schema_version: u32,
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeDocument>,
    pub commodities: Vec<CommodityDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl InstanceDocument {
    /// Paths are always written out so that reading the document back
    /// reproduces the problem exactly.
    pub fn from_instance(problem: &RoutingProblem, profile: &SensitivityProfile, gamma: Option<f64>) -> Self {
        let node = |i: usize| problem.nodes[i].clone();
        Self {
            schema_version: SCHEMA_VERSION,
            name: problem.name.clone(),
            nodes: problem.nodes.clone(),
            edges: problem
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    tail: node(e.tail),
                    head: node(e.head),
                    a: e.latency.a,
                    d: e.latency.degree,
                    b: e.latency.b,
                })
                .collect(),
            commodities: problem
                .commodities
                .iter()
                .enumerate()
                .map(|(c, com)| CommodityDocument {
                    source: node(com.source),
                    sink: node(com.sink),
                    rate: com.rate,
                    classes: profile.classes(c).iter().map(|k| ClassDocument { beta: k.beta, mass: k.mass }).collect(),
                    paths: Some(com.paths.iter().map(|p| p.0.clone()).collect()),
                })
                .collect(),
            gamma,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents serialize")
    }

    /// Builds and validates the problem and profile.
    pub fn to_instance(&self, paths_cap: usize) -> Result<Instance, IoError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IoError::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut index = HashMap::new();
        for (i, id) in self.nodes.iter().enumerate() {
            if index.insert(id.as_str(), i).is_some() {
                return Err(IoError::invalid(format!("duplicate node id {id:?}")));
            }
        }
        let lookup = |field: &str, id: &str| {
            index.get(id).copied().ok_or_else(|| IoError::invalid(format!("{field}: unknown node {id:?}")))
        };
        let mut errors = Vec::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            if ![e.a, e.b].iter().all(|v| v.is_finite()) {
                errors.push(format!("edges[{i}]: coefficients must be finite"));
            }
            edges.push(Edge::new(lookup(&format!("edges[{i}].tail"), &e.tail)?, lookup(&format!("edges[{i}].head"), &e.head)?, Latency::new(e.a, e.d, e.b)));
        }
        let mut commodities = Vec::with_capacity(self.commodities.len());
        let mut classes = Vec::with_capacity(self.commodities.len());
        for (c, com) in self.commodities.iter().enumerate() {
            let source = lookup(&format!("commodities[{c}].source"), &com.source)?;
            let sink = lookup(&format!("commodities[{c}].sink"), &com.sink)?;
            if !com.rate.is_finite() {
                errors.push(format!("commodities[{c}].rate must be finite"));
            }
            let paths = match &com.paths {
                Some(list) => list.iter().cloned().map(Path).collect(),
                None => enumerate_paths(self.nodes.len(), &edges, source, sink, paths_cap)
                    .map_err(|e| IoError::invalid(format!("commodities[{c}]: {e}")))?,
            };
            commodities.push(Commodity { source, sink, rate: com.rate, paths });
            for (k, class) in com.classes.iter().enumerate() {
                if !class.beta.is_finite() || !class.mass.is_finite() {
                    errors.push(format!("commodities[{c}].classes[{k}]: values must be finite"));
                }
            }
            classes.push(com.classes.iter().map(|k| SensitivityClass::new(k.beta, k.mass)).collect());
        }
        if !errors.is_empty() {
            return Err(IoError::Validation(errors));
        }
        let problem = RoutingProblem { name: self.name.clone(), nodes: self.nodes.clone(), edges, commodities };
        let report = problem.validate();
        if !report.is_empty() {
            return Err(IoError::Validation(report.messages()));
        }
        let profile = SensitivityProfile::new(classes).map_err(|e| IoError::invalid(e.to_string()))?;
        profile.check_against(&problem).map_err(|e| IoError::invalid(e.to_string()))?;
        Ok((problem, profile))
    }
}

pub fn parse_document(text: &str) -> Result<InstanceDocument, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse(e.to_string()))
}

/// Parses and validates an instance, enumerating paths with the default cap.
pub fn parse_instance(text: &str) -> Result<Instance, IoError> {
    parse_instance_with_cap(text, DEFAULT_PATH_CAP)
}

pub fn parse_instance_with_cap(text: &str, paths_cap: usize) -> Result<Instance, IoError> {
    parse_document(text)?.to_instance(paths_cap)
}

pub fn serialize_instance(problem: &RoutingProblem, profile: &SensitivityProfile, gamma: Option<f64>) -> String {
    InstanceDocument::from_instance(problem, profile, gamma).to_json()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum InstanceRef {
    Path { path: String },
    Builtin { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    List(Vec<f64>),
    Range { lo: f64, hi: f64, step: f64 },
}

impl GammaSpec {
    /// Values in increasing order.
    pub fn values(&self) -> Result<Vec<f64>, IoError> {
        let mut values = match *self {
            GammaSpec::List(ref v) => v.clone(),
            GammaSpec::Range { lo, hi, step } => {
                if !(step > 0.0) || !step.is_finite() || !(lo <= hi) {
                    return Err(IoError::invalid(format!("gamma range needs lo <= hi and step > 0, got {lo}:{hi}:{step}")));
                }
                let count = ((hi - lo) / step + 1e-9).floor() as usize;
                // snap away accumulated binary error so 0.1 steps print as 0.1
                (0..=count).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect()
            }
        };
        if values.is_empty() {
            return Err(IoError::invalid("at least one gamma is required"));
        }
        if let Some(bad) = values.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(IoError::invalid(format!("gamma must be finite and nonnegative, got {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceRef,
    pub gammas: GammaSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_format")]
    pub output: OutputFormat,
    #[serde(default)]
    pub seed: u64,
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

impl ExperimentConfig {
    pub fn load_instance(&self, paths_cap: usize) -> Result<Instance, IoError> {
        match &self.instance {
            InstanceRef::Builtin { name } => Ok(builtin_instance(name)?),
            InstanceRef::Path { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| IoError::Parse(format!("{path}: {e}")))?;
                parse_instance_with_cap(&text, paths_cap)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub l_nf: f64,
    pub l_opt: f64,
    pub poa_ratio: f64,
    pub perversity_ratio: f64,
    pub converged: bool,
    pub relative_gap: f64,
    pub iterations: usize,
}

/// Solve outcome kept even when the solver stopped early.
fn lenient(outcome: Result<EquilibriumResult, EquilibriumError>) -> Result<(EquilibriumResult, bool), EquilibriumError> {
    match outcome {
        Ok(r) => Ok((r, true)),
        Err(EquilibriumError::NotConverged { result, .. }) => Ok((*result, false)),
        Err(e) => Err(e),
    }
}

/// One row per gamma, in increasing gamma. Rows whose solves did not
/// converge report `converged = false` with the best iterate's values.
pub fn run_sweep(
    problem: &RoutingProblem,
    profile: &SensitivityProfile,
    gammas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<SweepRow>, IoError> {
    let mut gammas = gammas.to_vec();
    gammas.sort_by(f64::total_cmp);
    let (opt, opt_ok) = lenient(solve_optimum(problem, config))?;
    let zero_ctx = PerceivedCostContext::slowdown(problem, profile, 0.0)?;
    let (zero, zero_ok) = lenient(solve_nash(&zero_ctx, config))?;
    gammas
        .iter()
        .map(|&gamma| {
            let (nash, ok) = if gamma == 0.0 {
                (zero.clone(), zero_ok)
            } else {
                lenient(solve_nash(&PerceivedCostContext::slowdown(problem, profile, gamma)?, config))?
            };
            Ok(SweepRow {
                gamma,
                l_nf: nash.total_latency,
                l_opt: opt.total_latency,
                poa_ratio: nash.total_latency / opt.total_latency,
                perversity_ratio: nash.total_latency / zero.total_latency,
                converged: ok && zero_ok && opt_ok,
                relative_gap: nash.relative_gap,
                iterations: nash.iterations,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.gamma, r.l_nf, r.l_opt, r.poa_ratio, r.perversity_ratio, r.converged, r.relative_gap, r.iterations
        );
    }
    out
}

pub fn sweep_json(rows: &[SweepRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Runs the configured sweep and renders it in the configured format.
pub fn run_experiment(config: &ExperimentConfig, paths_cap: usize) -> Result<String, IoError> {
    let (problem, profile) = config.load_instance(paths_cap)?;
    let mut solver = config.solver.clone();
    solver.seed = config.seed;
    let rows = run_sweep(&problem, &profile, &config.gammas.values()?, &solver)?;
    Ok(match config.output {
        OutputFormat::Csv => sweep_csv(&rows),
        OutputFormat::Json => sweep_json(&rows),
    })
}

/// Best witness of a family search with enough context to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSearchDocument {
    pub gamma: f64,
    pub family: WitnessFamily,
    pub witness_index: usize,
    pub instance: InstanceDocument,
    pub record: PerversityRecord,
    pub trace: TraceSummary,
}

pub fn run_witness_search(
    family: &WitnessFamily,
    gamma: f64,
    config: &SolverConfig,
    workers: usize,
) -> Result<WitnessSearchDocument, IoError> {
    let report = search_perverse_witness(family, gamma, config, workers)?;
    Ok(WitnessSearchDocument {
        gamma,
        family: report.family,
        witness_index: report.best.index,
        instance: InstanceDocument::from_instance(&report.best.problem, &report.best.profile, Some(gamma)),
        record: report.best.record,
        trace: report.trace.summary(),
    })
}
