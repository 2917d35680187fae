//! Nash flows of the slowdown-sensitive routing game and social optima.
//!
//! A user of class `k` with sensitivity `beta_k` perceives a path as
//! `sum_e l_e(f_e) - gamma * beta_k * l_e(0)`. The game has the convex potential
//!
//! ```text
//! Phi(f) = sum_e int_0^{f_e} l_e(t) dt - gamma * sum_{c,k,p} beta_k f^{c,k}_p sum_{e in p} b_e
//! ```
//!
//! whose partial derivatives are exactly the perceived path costs, so Nash
//! flows are the minimizers of `Phi` over the class-disaggregated flow polytope.
//! In emulated-altruism mode each class instead perceives
//! `(1 + d alpha_k) a_e f_e^d + b_e`; those costs are the slowdown costs divided
//! by `1 - gamma beta_k`, so the same flows are reached by minimizing the
//! weighted potential `sum_e a_e f_e^{d+1}/(d+1) + sum w_k f^{c,k}_p sum b_e`
//! with `w_k = 1/(1 + d alpha_k)`.

mod oracle;
mod solver;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{FlowAssignment, NetworkError, Path, RoutingProblem, FEASIBILITY_TOL};
use crate::population::{beta_to_alpha, PopulationError, SensitivityProfile, Signal};

pub use oracle::{brute_force_oracle, two_link_oracle, TwoLinkFlow, MAX_BRUTE_FORCE_DIMENSION};
pub use solver::{DirectionRule, InitialFlow, SolverConfig, StepRule};

use solver::{EdgeTerm, Objective};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error("emulated-altruism mode needs one latency degree on every edge")]
    NonUniformDegree,
    #[error("solver did not reach relative gap {tolerance:e} (best {:e} after {} iterations)", .result.relative_gap, .result.iterations)]
    NotConverged { tolerance: f64, result: Box<EquilibriumResult> },
    #[error("brute-force oracle supports at most {max} flow variables, instance has {dimension}")]
    DimensionTooLarge { dimension: usize, max: usize },
    #[error("brute-force grid would have {points} points")]
    GridTooLarge { points: f64 },
    #[error("two-link oracle needs a_1 + a_2 > 0 or untied class preferences")]
    DegenerateInstance { fallback: TwoLinkFlow },
    #[error("invalid oracle input: {0}")]
    InvalidInput(String),
}

impl EquilibriumError {
    /// The best iterate of a solve that ran out of iterations.
    pub fn unconverged_result(&self) -> Option<&EquilibriumResult> {
        match self {
            EquilibriumError::NotConverged { result, .. } => Some(result),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    Slowdown,
    EmulatedAltruism,
}

/// Everything needed to evaluate what a user of a given class perceives.
#[derive(Debug, Clone)]
pub struct PerceivedCostContext<'a> {
    problem: &'a RoutingProblem,
    profile: &'a SensitivityProfile,
    signal: Signal,
    mode: CostMode,
    /// `alpha_k` per class; only populated in emulated mode.
    alphas: Vec<Vec<f64>>,
    degree: u32,
}

impl<'a> PerceivedCostContext<'a> {
    pub fn new(
        problem: &'a RoutingProblem,
        profile: &'a SensitivityProfile,
        signal: Signal,
        mode: CostMode,
    ) -> Result<Self, EquilibriumError> {
        problem.ensure_valid()?;
        profile.check_against(problem)?;
        let mut ctx = Self { problem, profile, signal, mode, alphas: Vec::new(), degree: 0 };
        if mode == CostMode::EmulatedAltruism {
            let degree = problem.uniform_degree().ok_or(EquilibriumError::NonUniformDegree)?;
            ctx.degree = degree;
            ctx.alphas = profile
                .commodities()
                .iter()
                .map(|classes| {
                    classes
                        .iter()
                        .map(|k| beta_to_alpha(k.beta, signal.gamma(), degree))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<_, _>>()?;
        }
        Ok(ctx)
    }

    /// Slowdown-mode context.
    pub fn slowdown(
        problem: &'a RoutingProblem,
        profile: &'a SensitivityProfile,
        gamma: f64,
    ) -> Result<Self, EquilibriumError> {
        Self::new(problem, profile, Signal::new(gamma)?, CostMode::Slowdown)
    }

    pub fn problem(&self) -> &'a RoutingProblem {
        self.problem
    }

    pub fn profile(&self) -> &'a SensitivityProfile {
        self.profile
    }

    pub fn signal(&self) -> Signal {
        self.signal
    }

    pub fn mode(&self) -> CostMode {
        self.mode
    }

    /// Altruism level of a class (emulated mode only).
    pub fn alpha(&self, commodity: usize, class: usize) -> Option<f64> {
        self.alphas.get(commodity).map(|a| a[class])
    }

    fn class_beta(&self, commodity: usize, class: usize) -> f64 {
        self.profile.classes(commodity)[class].beta
    }

    /// Weight linking a class's perceived cost to the potential gradient.
    fn gradient_weight(&self, commodity: usize, class: usize) -> f64 {
        match self.mode {
            CostMode::Slowdown => 1.0,
            CostMode::EmulatedAltruism => {
                1.0 / (1.0 + f64::from(self.degree) * self.alphas[commodity][class])
            }
        }
    }

    /// Cost of `path` as perceived by class `class` of commodity `commodity`.
    pub fn perceived_cost(&self, commodity: usize, class: usize, path: &Path, edge_flows: &[f64]) -> f64 {
        let edges = &self.problem.edges;
        match self.mode {
            CostMode::Slowdown => {
                let discount = self.signal.gamma() * self.class_beta(commodity, class);
                path.edges()
                    .iter()
                    .map(|&e| {
                        let l = &edges[e].latency;
                        l.eval(edge_flows[e]) - discount * l.free_flow()
                    })
                    .sum()
            }
            CostMode::EmulatedAltruism => {
                let scale = 1.0 + f64::from(self.degree) * self.alphas[commodity][class];
                path.edges()
                    .iter()
                    .map(|&e| {
                        let l = &edges[e].latency;
                        scale * l.congestion(edge_flows[e]) + l.b
                    })
                    .sum()
            }
        }
    }

    /// Class-level feasibility: every class routes exactly its mass.
    pub fn check_flow(&self, flow: &FlowAssignment) -> Result<(), EquilibriumError> {
        flow.check_feasible(self.problem)?;
        let tol = FEASIBILITY_TOL * self.problem.total_rate();
        for (c, classes) in self.profile.commodities().iter().enumerate() {
            let flows = &flow.class_flows()[c];
            if flows.len() != classes.len() {
                return Err(NetworkError::InfeasibleFlow(format!(
                    "commodity {c}: flow has {} classes, profile has {}",
                    flows.len(),
                    classes.len()
                ))
                .into());
            }
            for (k, (class, f)) in classes.iter().zip(flows).enumerate() {
                let routed: f64 = f.iter().sum();
                if (routed - class.mass).abs() > tol {
                    return Err(NetworkError::InfeasibleFlow(format!(
                        "commodity {c} class {k}: routed {routed}, mass {}",
                        class.mass
                    ))
                    .into());
                }
            }
        }
        Ok(())
    }

    pub(crate) fn objective(&self) -> Objective<'a> {
        let problem = self.problem;
        let term = match self.mode {
            CostMode::Slowdown => EdgeTerm::Beckmann,
            CostMode::EmulatedAltruism => EdgeTerm::CongestionOnly,
        };
        let masses = self
            .profile
            .commodities()
            .iter()
            .map(|classes| classes.iter().map(|k| k.mass).collect())
            .collect();
        let offsets = problem
            .commodities
            .iter()
            .enumerate()
            .map(|(c, commodity)| {
                (0..self.profile.classes(c).len())
                    .map(|k| {
                        commodity
                            .paths
                            .iter()
                            .map(|p| {
                                let free = problem.free_flow_latency(p);
                                match self.mode {
                                    CostMode::Slowdown => {
                                        -self.signal.gamma() * self.class_beta(c, k) * free
                                    }
                                    CostMode::EmulatedAltruism => self.gradient_weight(c, k) * free,
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Objective::new(problem, term, masses, offsets)
    }
}

/// Value of the game's potential at a feasible flow.
///
/// In slowdown mode this is the Beckmann integral minus the linear slowdown
/// credit; in emulated-altruism mode it is the weighted potential described in
/// the module docs. The two agree up to rounding of `w_k` vs `1 - gamma beta_k`.
pub fn potential(ctx: &PerceivedCostContext<'_>, flow: &FlowAssignment) -> Result<f64, EquilibriumError> {
    ctx.check_flow(flow)?;
    let objective = ctx.objective();
    let edge_flows = flow.edge_flows(ctx.problem);
    Ok(objective.value(flow.class_flows(), &edge_flows))
}

/// The potential's formula evaluated at arbitrary path flows
/// `[commodity][class][path]`, without checking class masses; its partial
/// derivatives are the perceived path costs.
pub fn potential_unconstrained(ctx: &PerceivedCostContext<'_>, class_flows: &[Vec<Vec<f64>>]) -> f64 {
    let edge_flows = FlowAssignment::new(class_flows.to_vec()).edge_flows(ctx.problem);
    ctx.objective().value(class_flows, &edge_flows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Unnormalized duality gap at the returned flow.
    pub absolute_gap: f64,
    /// Some edge has `a_e = 0`, so aggregate edge flows need not be unique.
    pub possibly_non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub flow: FlowAssignment,
    /// Potential (Nash) or total latency (optimum) at `flow`.
    pub potential_value: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub total_latency: f64,
    /// Minimum perceived path cost of each class, indexed `[commodity][class]`.
    /// For social optima this is the minimum marginal path cost per commodity.
    pub per_class_min_cost: Vec<Vec<f64>>,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl EquilibriumResult {
    /// Wardrop slack matched to the accuracy the solver certified.
    pub fn wardrop_epsilon(&self) -> f64 {
        let scale = self
            .per_class_min_cost
            .iter()
            .flatten()
            .fold(self.potential_value.abs() + 1.0, |m, c| m.max(c.abs()));
        (10.0 * self.relative_gap * scale).max(1e-8)
    }
}

fn has_flat_edge(problem: &RoutingProblem) -> bool {
    problem.edges.iter().any(|e| e.latency.a == 0.0)
}

/// Nash flow as the minimizer of the game's potential.
pub fn solve_nash(
    ctx: &PerceivedCostContext<'_>,
    config: &SolverConfig,
) -> Result<EquilibriumResult, EquilibriumError> {
    config.validate()?;
    let objective = ctx.objective();
    let outcome = solver::minimize(&objective, config);
    let problem = ctx.problem;
    let edge_flows = outcome.flow.edge_flows(problem);
    let per_class_min_cost = problem
        .commodities
        .iter()
        .enumerate()
        .map(|(c, commodity)| {
            (0..ctx.profile.classes(c).len())
                .map(|k| {
                    commodity
                        .paths
                        .iter()
                        .map(|p| ctx.perceived_cost(c, k, p, &edge_flows))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
        .collect();
    let result = EquilibriumResult {
        total_latency: crate::network::edge_total_latency(problem, &edge_flows),
        flow: outcome.flow,
        potential_value: outcome.value,
        relative_gap: outcome.relative_gap,
        iterations: outcome.iterations,
        per_class_min_cost,
        converged: outcome.converged,
        diagnostics: Diagnostics {
            absolute_gap: outcome.absolute_gap,
            possibly_non_unique: has_flat_edge(problem),
        },
    };
    finish(result, config)
}

/// Flow minimizing total latency, found with marginal-cost directions.
pub fn solve_optimum(
    problem: &RoutingProblem,
    config: &SolverConfig,
) -> Result<EquilibriumResult, EquilibriumError> {
    config.validate()?;
    problem.ensure_valid()?;
    let masses = problem.commodities.iter().map(|c| vec![c.rate]).collect();
    let offsets = problem.commodities.iter().map(|c| vec![vec![0.0; c.paths.len()]]).collect();
    let objective = Objective::new(problem, EdgeTerm::SystemCost, masses, offsets);
    let outcome = solver::minimize(&objective, config);
    let edge_flows = outcome.flow.edge_flows(problem);
    let per_class_min_cost = problem
        .commodities
        .iter()
        .map(|commodity| {
            let best = commodity
                .paths
                .iter()
                .map(|p| {
                    p.edges()
                        .iter()
                        .map(|&e| problem.edges[e].latency.marginal_cost(edge_flows[e]))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            vec![best]
        })
        .collect();
    let result = EquilibriumResult {
        total_latency: crate::network::edge_total_latency(problem, &edge_flows),
        flow: outcome.flow,
        potential_value: outcome.value,
        relative_gap: outcome.relative_gap,
        iterations: outcome.iterations,
        per_class_min_cost,
        converged: outcome.converged,
        diagnostics: Diagnostics {
            absolute_gap: outcome.absolute_gap,
            possibly_non_unique: has_flat_edge(problem),
        },
    };
    finish(result, config)
}

fn finish(result: EquilibriumResult, config: &SolverConfig) -> Result<EquilibriumResult, EquilibriumError> {
    if result.converged {
        Ok(result)
    } else {
        Err(EquilibriumError::NotConverged { tolerance: config.tolerance, result: Box::new(result) })
    }
}

/// A used path that costs its class more than the cheapest alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub commodity: usize,
    pub class: usize,
    pub path: usize,
    pub flow: f64,
    pub cost: f64,
    pub min_cost: f64,
}

impl Deviation {
    pub fn excess(&self) -> f64 {
        self.cost - self.min_cost
    }
}

impl fmt::Display for Deviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "commodity {} class {} path {}: flow {:.3e} pays {} > min {} (excess {:.3e})",
            self.commodity,
            self.class,
            self.path,
            self.flow,
            self.cost,
            self.min_cost,
            self.excess()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub epsilon: f64,
    pub violations: Vec<Deviation>,
}

impl DeviationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_excess(&self) -> f64 {
        self.violations.iter().map(Deviation::excess).fold(0.0, f64::max)
    }
}

/// Checks the epsilon-Wardrop condition for every class on every path it uses.
pub fn verify_nash(
    ctx: &PerceivedCostContext<'_>,
    flow: &FlowAssignment,
    epsilon: f64,
) -> Result<DeviationReport, EquilibriumError> {
    ctx.check_flow(flow)?;
    let problem = ctx.problem;
    let edge_flows = flow.edge_flows(problem);
    let mut violations = Vec::new();
    for (c, commodity) in problem.commodities.iter().enumerate() {
        for (k, class) in ctx.profile.classes(c).iter().enumerate() {
            let costs: Vec<f64> = commodity
                .paths
                .iter()
                .map(|p| ctx.perceived_cost(c, k, p, &edge_flows))
                .collect();
            let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
            for (p, (&f, &cost)) in flow.class_path_flows(c, k).iter().zip(&costs).enumerate() {
                if f > class.mass * 1e-9 && cost > min_cost + epsilon {
                    violations.push(Deviation { commodity: c, class: k, path: p, flow: f, cost, min_cost });
                }
            }
        }
    }
    Ok(DeviationReport { epsilon, violations })
}

#[cfg(test)]
mod tests;
