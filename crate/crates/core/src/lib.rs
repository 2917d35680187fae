//! Nash flows, social optima and signal analysis for nonatomic routing games
//! whose users react to a broadcast "slowdown" signal.
//!
//! Each user perceives a path's cost as its latency minus a discount on its
//! free-flow latency, scaled by the user's slowdown sensitivity `beta` and the
//! planner's signal `gamma`. The crate computes equilibria of that game,
//! compares them with the un-signaled equilibrium and the social optimum, and
//! searches instance families for signals that make congestion worse.

// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod equilibrium;
pub mod io;
pub mod network;
pub mod population;

pub use analysis::{
    non_perverse_threshold, optimal_signal, perversity_ratio, poa_ratio, search_perverse_witness, signaled_poa_bound,
    worst_case_over_beta, AnalysisError, PerversityRecord, WitnessFamily,
};
pub use equilibrium::{
    potential, potential_unconstrained, solve_nash, solve_optimum, verify_nash, CostMode, EquilibriumError, EquilibriumResult,
    PerceivedCostContext, SolverConfig,
};
pub use io::{builtin_instance, parse_instance, run_sweep, run_witness_search, serialize_instance, InstanceDocument, IoError};
pub use network::{
    classify, enumerate_paths, path_latency, total_latency, validate_problem, Commodity, Edge, FlowAssignment,
    Latency, NetworkClass, Path, RoutingProblem,
};
pub use population::{alpha_to_beta, beta_to_alpha, profile_bounds, SensitivityClass, SensitivityProfile, Signal};
