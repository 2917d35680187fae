//! Perversity and price-of-anarchy ratios, the optimal signal for parallel
//! linear networks, and witness searches over instance families.

mod witness;


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{solve_nash, solve_optimum, CostMode, EquilibriumError, EquilibriumResult, PerceivedCostContext, SolverConfig};
use crate::network::{classify, NetworkClass, RoutingProblem};
use crate::population::{SensitivityClass, SensitivityProfile, Signal};

pub use witness::{
    search_perverse_witness, CandidateOutcome, FamilyKind, Interval, ParameterRanges, SearchStrategy, SearchTrace,
    TraceSummary, Witness, WitnessFamily, WitnessReport,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("invalid sensitivity bounds: {0}")]
    InvalidBounds(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("invalid witness family: {0}")]
    InvalidFamily(String),
    #[error("all {failed} candidates failed to solve")]
    NoCandidates { failed: usize },
}

/// Convergence evidence for one equilibrium solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub relative_gap: f64,
    pub absolute_gap: f64,
    pub iterations: usize,
    pub possibly_non_unique: bool,
}

impl From<&EquilibriumResult> for SolveSummary {
    fn from(r: &EquilibriumResult) -> Self {
        Self {
            converged: r.converged,
            relative_gap: r.relative_gap,
            absolute_gap: r.diagnostics.absolute_gap,
            iterations: r.iterations,
            possibly_non_unique: r.diagnostics.possibly_non_unique,
        }
    }
}

/// Signaled versus un-signaled equilibrium latency on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerversityRecord {
    pub instance: String,
    pub gamma: f64,
    pub l_nf_gamma: f64,
    pub l_nf_zero: f64,
    pub ratio: f64,
    pub solve_gamma: SolveSummary,
    pub solve_zero: SolveSummary,
}

impl PerversityRecord {
    /// The signal makes this instance's equilibrium strictly worse.
    pub fn is_perverse(&self) -> bool {
        self.ratio > 1.0
    }
}

/// `L(gamma) / L(0)` for the slowdown-mode Nash flows.
pub fn perversity_ratio(
    problem: &RoutingProblem,
    profile: &SensitivityProfile,
    gamma: f64,
    config: &SolverConfig,
) -> Result<PerversityRecord, AnalysisError> {
    let signal = Signal::new(gamma).map_err(EquilibriumError::from)?;
    let zero_ctx = PerceivedCostContext::new(problem, profile, Signal::NONE, CostMode::Slowdown)?;
    let zero = solve_nash(&zero_ctx, config)?;
    let signaled = if gamma == 0.0 {
        zero.clone()
    } else {
        solve_nash(&PerceivedCostContext::new(problem, profile, signal, CostMode::Slowdown)?, config)?
    };
    if !(zero.total_latency > 0.0) {
        return Err(AnalysisError::PreconditionViolated("un-signaled equilibrium latency is zero".into()));
    }
    Ok(PerversityRecord {
        instance: problem.name.clone(),
        gamma,
        l_nf_gamma: signaled.total_latency,
        l_nf_zero: zero.total_latency,
        ratio: signaled.total_latency / zero.total_latency,
        solve_gamma: SolveSummary::from(&signaled),
        solve_zero: SolveSummary::from(&zero),
    })
}

/// Equilibrium latency at `gamma` over optimal latency.
pub fn poa_ratio(
    problem: &RoutingProblem,
    profile: &SensitivityProfile,
    gamma: f64,
    config: &SolverConfig,
) -> Result<f64, AnalysisError> {
    let ctx = PerceivedCostContext::slowdown(problem, profile, gamma)?;
    let nash = solve_nash(&ctx, config)?;
    let opt = solve_optimum(problem, config)?;
    if !(opt.total_latency > 0.0) {
        return Err(AnalysisError::PreconditionViolated("optimal latency is zero".into()));
    }
    Ok(nash.total_latency / opt.total_latency)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalSignal {
    pub gamma: f64,
    /// The planner should exaggerate slowdowns (`gamma > 1`).
    pub over_statement: bool,
}

fn check_bounds(beta_l: f64, beta_u: f64) -> Result<(), AnalysisError> {
    if beta_l > 0.0 && beta_l <= beta_u && beta_u < 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::InvalidBounds(format!("need 0 < beta_L <= beta_U < 1, got ({beta_l}, {beta_u})")))
    }
}

/// Signal minimizing worst-case equilibrium latency on parallel linear
/// networks when sensitivities lie in `[beta_l, beta_u]`.
pub fn optimal_signal(beta_l: f64, beta_u: f64) -> Result<OptimalSignal, AnalysisError> {
    check_bounds(beta_l, beta_u)?;
    let gamma = 1.0 / (beta_l + beta_u);
    Ok(OptimalSignal { gamma, over_statement: gamma > 1.0 })
}

/// Worst-case price of anarchy under the optimal signal,
/// `(4/3)(1 - rho/(1+rho)^2)` with `rho = beta_l / beta_u`.
pub fn signaled_poa_bound(beta_l: f64, beta_u: f64) -> Result<f64, AnalysisError> {
    check_bounds(beta_l, beta_u)?;
    let rho = beta_l / beta_u;
    // same expression over a common denominator; exact at rho = 1
    let s = 1.0 + rho;
    Ok(4.0 * (1.0 + rho + rho * rho) / (3.0 * s * s))
}

/// Largest signal that is never perverse on parallel networks of degree `d`.
pub fn non_perverse_threshold(degree: u32) -> f64 {
    let d = degree as f64;
    d / (d + 1.0)
}

/// Equilibrium latency of one two-point profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileLatency {
    /// Fraction of each commodity's rate assigned `beta_l`.
    pub low_share: f64,
    pub total_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub profile: SensitivityProfile,
    pub total_latency: f64,
    pub low_share: f64,
    /// Every profile tried, in increasing `low_share`.
    pub evaluated: Vec<ProfileLatency>,
}

/// Largest equilibrium latency at `gamma` over profiles that put a share
/// `s` of every commodity at `beta_l` and the rest at `beta_u`, for `s` on a
/// grid of `mass_steps` intervals.
pub fn worst_case_over_beta(
    problem: &RoutingProblem,
    beta_l: f64,
    beta_u: f64,
    gamma: f64,
    config: &SolverConfig,
    mass_steps: usize,
) -> Result<WorstCase, AnalysisError> {
    if !(0.0 <= beta_l && beta_l <= beta_u && beta_u <= 1.0) {
        return Err(AnalysisError::InvalidBounds(format!("need 0 <= beta_L <= beta_U <= 1, got ({beta_l}, {beta_u})")));
    }
    if mass_steps == 0 {
        return Err(AnalysisError::PreconditionViolated("mass grid needs at least one step".into()));
    }
    check_all_edges_used(problem, config)?;

    let mut evaluated = Vec::with_capacity(mass_steps + 1);
    let mut worst: Option<(f64, f64, SensitivityProfile)> = None;
    for step in 0..=mass_steps {
        let share = step as f64 / mass_steps as f64;
        let profile = two_point_profile(problem, beta_l, beta_u, share)?;
        let ctx = PerceivedCostContext::slowdown(problem, &profile, gamma)?;
        let latency = solve_nash(&ctx, config)?.total_latency;
        evaluated.push(ProfileLatency { low_share: share, total_latency: latency });
        if worst.as_ref().is_none_or(|(l, _, _)| latency > *l) {
            worst = Some((latency, share, profile));
        }
        if beta_l == beta_u {
            break;
        }
    }
    let (total_latency, low_share, profile) = worst.expect("at least one profile");
    Ok(WorstCase { profile, total_latency, low_share, evaluated })
}

fn check_all_edges_used(problem: &RoutingProblem, config: &SolverConfig) -> Result<(), AnalysisError> {
    problem.ensure_valid().map_err(EquilibriumError::from)?;
    if classify(problem) != NetworkClass::Parallel {
        return Err(AnalysisError::PreconditionViolated("network is not parallel".into()));
    }
    if problem.uniform_degree() != Some(1) {
        return Err(AnalysisError::PreconditionViolated("latencies are not all linear".into()));
    }
    let profile = SensitivityProfile::homogeneous(problem, 0.0).map_err(EquilibriumError::from)?;
    let ctx = PerceivedCostContext::new(problem, &profile, Signal::NONE, CostMode::Slowdown)?;
    let nash = solve_nash(&ctx, config)?;
    let floor = 1e-6 * problem.total_rate();
    for (e, f) in nash.flow.edge_flows(problem).iter().enumerate() {
        if !(*f > floor) {
            return Err(AnalysisError::PreconditionViolated(format!(
                "edge {e} carries {f:e} in the un-signaled equilibrium"
            )));
        }
    }
    Ok(())
}

fn two_point_profile(
    problem: &RoutingProblem,
    beta_l: f64,
    beta_u: f64,
    low_share: f64,
) -> Result<SensitivityProfile, EquilibriumError> {
    let commodities = problem
        .commodities
        .iter()
        .map(|c| {
            let low = c.rate * low_share;
            let high = c.rate - low;
            let mut classes = Vec::new();
            if low > 0.0 {
                classes.push(SensitivityClass::new(beta_l, low));
            }
            if high > 0.0 {
                classes.push(SensitivityClass::new(beta_u, high));
            }
            classes
        })
        .collect();
    Ok(SensitivityProfile::new(commodities)?)
}
