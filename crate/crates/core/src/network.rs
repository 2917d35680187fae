//! Routing problems: graphs with polynomial edge latencies, commodities with
//! explicit path sets, and feasible flows over those paths.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on the number of simple paths enumerated per commodity.
pub const DEFAULT_PATH_CAP: usize = 64;

/// Feasibility tolerance, relative to the total rate of the problem.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("more than {cap} simple paths from node {from} to node {to}")]
    PathExplosion { from: usize, to: usize, cap: usize },
    #[error("no path from node {from} to node {to}")]
    NoPath { from: usize, to: usize },
    #[error("infeasible flow: {0}")]
    InfeasibleFlow(String),
    #[error("invalid routing problem: {0}")]
    Invalid(ValidationReport),
}

/// Edge latency `a * x^degree + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub a: f64,
    pub degree: u32,
    pub b: f64,
}

impl Latency {
    pub fn new(a: f64, degree: u32, b: f64) -> Self {
        Self { a, degree, b }
    }

    pub fn linear(a: f64, b: f64) -> Self {
        Self::new(a, 1, b)
    }

    pub fn constant(b: f64) -> Self {
        Self::new(0.0, 1, b)
    }

    /// Congestion-dependent part `a * x^degree`.
    #[inline]
    pub fn congestion(&self, x: f64) -> f64 {
        self.a * x.powi(self.degree as i32)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.congestion(x) + self.b
    }

    #[inline]
    pub fn free_flow(&self) -> f64 {
        self.b
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let d = self.degree as i32;
        self.a * f64::from(self.degree) * x.powi(d - 1)
    }

    /// `∫_0^x l(t) dt`.
    #[inline]
    pub fn integral(&self, x: f64) -> f64 {
        let d1 = f64::from(self.degree + 1);
        self.a * x.powi(self.degree as i32 + 1) / d1 + self.b * x
    }

    /// Marginal social cost `l(x) + x l'(x)`.
    #[inline]
    pub fn marginal_cost(&self, x: f64) -> f64 {
        f64::from(self.degree + 1) * self.congestion(x) + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub latency: Latency,
}

impl Edge {
    pub fn new(tail: usize, head: usize, latency: Latency) -> Self {
        Self { tail, head, latency }
    }
}

/// A path stored as the ordered sequence of edge indices from source to sink.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(pub Vec<usize>);

impl Path {
    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, edge: usize) -> bool {
        self.0.contains(&edge)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_disjoint(&self, other: &Path) -> bool {
        self.0.iter().all(|e| !other.contains(*e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commodity {
    pub source: usize,
    pub sink: usize,
    pub rate: f64,
    pub paths: Vec<Path>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingProblem {
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub commodities: Vec<Commodity>,
}

impl RoutingProblem {
    pub fn total_rate(&self) -> f64 {
        self.commodities.iter().map(|c| c.rate).sum()
    }

    /// The common latency degree, if every edge has the same one.
    pub fn uniform_degree(&self) -> Option<u32> {
        let first = self.edges.first()?.latency.degree;
        self.edges
            .iter()
            .all(|e| e.latency.degree == first)
            .then_some(first)
    }

    pub fn path_count(&self) -> usize {
        self.commodities.iter().map(|c| c.paths.len()).sum()
    }

    /// Free-flow latency of a path, `sum of b_e`.
    pub fn free_flow_latency(&self, path: &Path) -> f64 {
        path.edges().iter().map(|&e| self.edges[e].latency.b).sum()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_problem(self)
    }

    pub fn ensure_valid(&self) -> Result<(), NetworkError> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(NetworkError::Invalid(report))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeCoefficient { edge: usize, coefficient: char, value: f64 },
    NonFiniteCoefficient { edge: usize },
    ZeroDegree { edge: usize },
    UnknownNode { edge: usize, node: usize },
    SelfLoop { edge: usize },
    UnknownEndpoint { commodity: usize, node: usize },
    SameEndpoints { commodity: usize },
    NonPositiveRate { commodity: usize, rate: f64 },
    NoPaths { commodity: usize },
    UnknownEdge { commodity: usize, path: usize, edge: usize },
    DisconnectedPath { commodity: usize, path: usize },
    NonSimplePath { commodity: usize, path: usize },
    DuplicatePath { commodity: usize, path: usize },
    NoCommodities,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeCoefficient { edge, coefficient, value } => {
                write!(f, "edge {edge}: negative coefficient {coefficient} = {value}")
            }
            Violation::NonFiniteCoefficient { edge } => {
                write!(f, "edge {edge}: non-finite latency coefficient")
            }
            Violation::ZeroDegree { edge } => write!(f, "edge {edge}: degree must be at least 1"),
            Violation::UnknownNode { edge, node } => {
                write!(f, "edge {edge}: unknown node index {node}")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: self loop"),
            Violation::UnknownEndpoint { commodity, node } => {
                write!(f, "commodity {commodity}: unknown endpoint node {node}")
            }
            Violation::SameEndpoints { commodity } => {
                write!(f, "commodity {commodity}: source equals sink")
            }
            Violation::NonPositiveRate { commodity, rate } => {
                write!(f, "commodity {commodity}: zero or negative rate {rate}")
            }
            Violation::NoPaths { commodity } => write!(f, "commodity {commodity}: no paths"),
            Violation::UnknownEdge { commodity, path, edge } => {
                write!(f, "commodity {commodity} path {path}: unknown edge index {edge}")
            }
            Violation::DisconnectedPath { commodity, path } => write!(
                f,
                "commodity {commodity} path {path}: disconnected path (does not join source to sink)"
            ),
            Violation::NonSimplePath { commodity, path } => {
                write!(f, "commodity {commodity} path {path}: path revisits a node")
            }
            Violation::DuplicatePath { commodity, path } => {
                write!(f, "commodity {commodity} path {path}: duplicate path")
            }
            Violation::NoCommodities => write!(f, "problem has no commodities (total rate is zero)"),
        }
    }
}

/// List of model violations; empty iff the problem is well formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

pub fn validate_problem(problem: &RoutingProblem) -> ValidationReport {
    let mut violations = Vec::new();
    let n = problem.nodes.len();

    for (i, edge) in problem.edges.iter().enumerate() {
        let lat = edge.latency;
        if !lat.a.is_finite() || !lat.b.is_finite() {
            violations.push(Violation::NonFiniteCoefficient { edge: i });
        }
        if lat.a < 0.0 {
            violations.push(Violation::NegativeCoefficient { edge: i, coefficient: 'a', value: lat.a });
        }
        if lat.b < 0.0 {
            violations.push(Violation::NegativeCoefficient { edge: i, coefficient: 'b', value: lat.b });
        }
        if lat.degree == 0 {
            violations.push(Violation::ZeroDegree { edge: i });
        }
        for node in [edge.tail, edge.head] {
            if node >= n {
                violations.push(Violation::UnknownNode { edge: i, node });
            }
        }
        if edge.tail == edge.head {
            violations.push(Violation::SelfLoop { edge: i });
        }
    }

    if problem.commodities.is_empty() {
        violations.push(Violation::NoCommodities);
    }

    for (c, commodity) in problem.commodities.iter().enumerate() {
        for node in [commodity.source, commodity.sink] {
            if node >= n {
                violations.push(Violation::UnknownEndpoint { commodity: c, node });
            }
        }
        if commodity.source == commodity.sink {
            violations.push(Violation::SameEndpoints { commodity: c });
        }
        if !(commodity.rate > 0.0) || !commodity.rate.is_finite() {
            violations.push(Violation::NonPositiveRate { commodity: c, rate: commodity.rate });
        }
        if commodity.paths.is_empty() {
            violations.push(Violation::NoPaths { commodity: c });
        }
        let mut seen = BTreeSet::new();
        for (p, path) in commodity.paths.iter().enumerate() {
            if let Some(&bad) = path.edges().iter().find(|&&e| e >= problem.edges.len()) {
                violations.push(Violation::UnknownEdge { commodity: c, path: p, edge: bad });
                continue;
            }
            match walk_path(problem, path, commodity.source, commodity.sink) {
                PathShape::Simple => {}
                PathShape::Disconnected => {
                    violations.push(Violation::DisconnectedPath { commodity: c, path: p })
                }
                PathShape::Revisits => {
                    violations.push(Violation::NonSimplePath { commodity: c, path: p })
                }
            }
            if !seen.insert(path.clone()) {
                violations.push(Violation::DuplicatePath { commodity: c, path: p });
            }
        }
    }

    ValidationReport { violations }
}

enum PathShape {
    Simple,
    Disconnected,
    Revisits,
}

fn walk_path(problem: &RoutingProblem, path: &Path, source: usize, sink: usize) -> PathShape {
    if path.is_empty() {
        return PathShape::Disconnected;
    }
    let mut at = source;
    let mut visited = BTreeSet::from([source]);
    for &e in path.edges() {
        let edge = &problem.edges[e];
        if edge.tail != at {
            return PathShape::Disconnected;
        }
        at = edge.head;
        if !visited.insert(at) {
            return PathShape::Revisits;
        }
    }
    if at == sink {
        PathShape::Simple
    } else {
        PathShape::Disconnected
    }
}

/// All simple `source -> sink` paths, in lexicographic order of their edge
/// index sequences.
pub fn enumerate_paths(
    node_count: usize,
    edges: &[Edge],
    source: usize,
    sink: usize,
    cap: usize,
) -> Result<Vec<Path>, NetworkError> {
    let mut outgoing = vec![Vec::new(); node_count];
    for (i, edge) in edges.iter().enumerate() {
        if edge.tail < node_count && edge.head < node_count && edge.tail != edge.head {
            outgoing[edge.tail].push(i);
        }
    }

    let mut found = Vec::new();
    let mut on_path = vec![false; node_count];
    let mut stack = Vec::new();
    if source < node_count {
        on_path[source] = true;
        if source == sink {
            return Err(NetworkError::NoPath { from: source, to: sink });
        }
        dfs(edges, &outgoing, source, sink, cap, &mut on_path, &mut stack, &mut found)
            .map_err(|_| NetworkError::PathExplosion { from: source, to: sink, cap })?;
    }
    if found.is_empty() {
        return Err(NetworkError::NoPath { from: source, to: sink });
    }
    Ok(found)
}

struct CapExceeded;

#[allow(clippy::too_many_arguments)]
fn dfs(
    edges: &[Edge],
    outgoing: &[Vec<usize>],
    at: usize,
    sink: usize,
    cap: usize,
    on_path: &mut [bool],
    stack: &mut Vec<usize>,
    found: &mut Vec<Path>,
) -> Result<(), CapExceeded> {
    if at == sink {
        if found.len() == cap {
            return Err(CapExceeded);
        }
        found.push(Path(stack.clone()));
        return Ok(());
    }
    for &e in &outgoing[at] {
        let next = edges[e].head;
        if on_path[next] {
            continue;
        }
        on_path[next] = true;
        stack.push(e);
        dfs(edges, outgoing, next, sink, cap, on_path, stack, found)?;
        stack.pop();
        on_path[next] = false;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkClass {
    Parallel,
    Symmetric,
    General,
}

impl fmt::Display for NetworkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkClass::Parallel => "parallel",
            NetworkClass::Symmetric => "symmetric",
            NetworkClass::General => "general",
        })
    }
}

/// Independent structural flags; a network may be both parallel and symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub parallel: bool,
    pub symmetric: bool,
}

impl Classification {
    pub fn most_specific(&self) -> NetworkClass {
        if self.parallel {
            NetworkClass::Parallel
        } else if self.symmetric {
            NetworkClass::Symmetric
        } else {
            NetworkClass::General
        }
    }
}

pub fn classification(problem: &RoutingProblem) -> Classification {
    let symmetric = problem.commodities.len() == 1;
    let shared_pair = problem
        .commodities
        .windows(2)
        .all(|w| w[0].source == w[1].source && w[0].sink == w[1].sink);
    let union: BTreeSet<&Path> = problem.commodities.iter().flat_map(|c| c.paths.iter()).collect();
    let union: Vec<&Path> = union.into_iter().collect();
    let disjoint = union
        .iter()
        .enumerate()
        .all(|(i, p)| union[i + 1..].iter().all(|q| p.is_disjoint(q)));
    Classification { parallel: shared_pair && disjoint, symmetric }
}

pub fn classify(problem: &RoutingProblem) -> NetworkClass {
    classification(problem).most_specific()
}

/// Class-disaggregated path flows, indexed `[commodity][class][path]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAssignment {
    class_flows: Vec<Vec<Vec<f64>>>,
}

impl FlowAssignment {
    pub fn new(class_flows: Vec<Vec<Vec<f64>>>) -> Self {
        Self { class_flows }
    }

    /// One class per commodity carrying the given path flows.
    pub fn from_path_flows(path_flows: Vec<Vec<f64>>) -> Self {
        Self::new(path_flows.into_iter().map(|f| vec![f]).collect())
    }

    pub fn class_flows(&self) -> &[Vec<Vec<f64>>] {
        &self.class_flows
    }

    pub fn class_path_flows(&self, commodity: usize, class: usize) -> &[f64] {
        &self.class_flows[commodity][class]
    }

    /// Aggregate path flows `f_p^c` of one commodity.
    pub fn path_flows(&self, commodity: usize) -> Vec<f64> {
        let classes = &self.class_flows[commodity];
        let n = classes.first().map_or(0, Vec::len);
        (0..n).map(|p| classes.iter().map(|k| k[p]).sum()).collect()
    }

    pub fn edge_flows(&self, problem: &RoutingProblem) -> Vec<f64> {
        let mut flows = vec![0.0; problem.edges.len()];
        for (c, commodity) in problem.commodities.iter().enumerate() {
            for (p, path) in commodity.paths.iter().enumerate() {
                let fp: f64 = self.class_flows[c].iter().map(|k| k[p]).sum();
                for &e in path.edges() {
                    flows[e] += fp;
                }
            }
        }
        flows
    }

    /// Shape, sign and per-commodity conservation checks against `problem`.
    pub fn check_feasible(&self, problem: &RoutingProblem) -> Result<(), NetworkError> {
        let tol = FEASIBILITY_TOL * problem.total_rate();
        if self.class_flows.len() != problem.commodities.len() {
            return Err(NetworkError::InfeasibleFlow(format!(
                "flow has {} commodities, problem has {}",
                self.class_flows.len(),
                problem.commodities.len()
            )));
        }
        for (c, commodity) in problem.commodities.iter().enumerate() {
            let mut total = 0.0;
            for (k, flows) in self.class_flows[c].iter().enumerate() {
                if flows.len() != commodity.paths.len() {
                    return Err(NetworkError::InfeasibleFlow(format!(
                        "commodity {c} class {k}: {} path flows for {} paths",
                        flows.len(),
                        commodity.paths.len()
                    )));
                }
                if let Some(bad) = flows.iter().find(|f| !(**f >= -tol) || !f.is_finite()) {
                    return Err(NetworkError::InfeasibleFlow(format!(
                        "commodity {c} class {k}: negative or non-finite path flow {bad}"
                    )));
                }
                total += flows.iter().sum::<f64>();
            }
            if (total - commodity.rate).abs() > tol {
                return Err(NetworkError::InfeasibleFlow(format!(
                    "commodity {c}: routed {total}, demand {}",
                    commodity.rate
                )));
            }
        }
        Ok(())
    }
}

/// `sum over e in p of l_e(f_e)`.
pub fn path_latency(problem: &RoutingProblem, path: &Path, edge_flows: &[f64]) -> f64 {
    path.edges().iter().map(|&e| problem.edges[e].latency.eval(edge_flows[e])).sum()
}

/// Total latency `sum_e f_e l_e(f_e)`.
pub fn total_latency(problem: &RoutingProblem, flow: &FlowAssignment) -> Result<f64, NetworkError> {
    flow.check_feasible(problem)?;
    Ok(edge_total_latency(problem, &flow.edge_flows(problem)))
}

/// Total latency in path form, `sum_p f_p l_p(f)`.
pub fn total_latency_by_paths(
    problem: &RoutingProblem,
    flow: &FlowAssignment,
) -> Result<f64, NetworkError> {
    flow.check_feasible(problem)?;
    let edge_flows = flow.edge_flows(problem);
    Ok(problem
        .commodities
        .iter()
        .enumerate()
        .map(|(c, commodity)| {
            let fp = flow.path_flows(c);
            commodity
                .paths
                .iter()
                .zip(fp)
                .map(|(path, f)| f * path_latency(problem, path, &edge_flows))
                .sum::<f64>()
        })
        .sum())
}

pub(crate) fn edge_total_latency(problem: &RoutingProblem, edge_flows: &[f64]) -> f64 {
    problem
        .edges
        .iter()
        .zip(edge_flows)
        .map(|(edge, &f)| f * edge.latency.eval(f))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pigou() -> RoutingProblem {
        RoutingProblem {
            name: "pigou".into(),
            nodes: vec!["s".into(), "t".into()],
            edges: vec![
                Edge::new(0, 1, Latency::linear(1.0, 0.0)),
                Edge::new(0, 1, Latency::constant(1.0)),
            ],
            commodities: vec![Commodity {
                source: 0,
                sink: 1,
                rate: 1.0,
                paths: vec![Path(vec![0]), Path(vec![1])],
            }],
        }
    }

    fn braess_edges() -> Vec<Edge> {
        // s=0, v=1, w=2, t=3
        vec![
            Edge::new(0, 1, Latency::linear(1.0, 0.0)),
            Edge::new(0, 2, Latency::constant(1.0)),
            Edge::new(1, 2, Latency::constant(0.0)),
            Edge::new(1, 3, Latency::constant(1.0)),
            Edge::new(2, 3, Latency::linear(1.0, 0.0)),
        ]
    }

    fn braess() -> RoutingProblem {
        let edges = braess_edges();
        let paths = enumerate_paths(4, &edges, 0, 3, DEFAULT_PATH_CAP).unwrap();
        RoutingProblem {
            name: "braess".into(),
            nodes: ["s", "v", "w", "t"].map(String::from).to_vec(),
            edges,
            commodities: vec![Commodity { source: 0, sink: 3, rate: 1.0, paths }],
        }
    }

    #[test]
    fn latency_pieces() {
        let l = Latency::new(2.0, 2, 1.0);
        assert_eq!(l.eval(0.0), 1.0);
        assert_eq!(l.eval(3.0), 19.0);
        assert_eq!(l.derivative(3.0), 12.0);
        assert_eq!(l.integral(3.0), 2.0 * 27.0 / 3.0 + 3.0);
        assert_eq!(l.marginal_cost(3.0), 19.0 + 36.0);
    }

    #[test]
    fn pigou_is_well_formed() {
        assert!(validate_problem(&pigou()).is_empty());
    }

    #[test]
    fn negative_coefficient_is_reported() {
        let mut p = pigou();
        p.edges[0].latency.a = -1.0;
        let report = validate_problem(&p);
        assert!(report.mentions("negative coefficient"), "{report}");
    }

    #[test]
    fn empty_path_list_is_reported() {
        let mut p = pigou();
        p.commodities[0].paths.clear();
        assert!(validate_problem(&p).mentions("no paths"));
    }

    #[test]
    fn zero_rate_and_broken_paths_are_reported() {
        let mut p = braess();
        p.commodities[0].rate = 0.0;
        p.commodities[0].paths.push(Path(vec![0, 4]));
        p.commodities[0].paths.push(Path(vec![1, 4]));
        let report = validate_problem(&p);
        assert!(report.mentions("zero or negative rate"));
        assert!(report.mentions("disconnected path"));
        assert!(report.mentions("duplicate path"));
    }

    #[test]
    fn parallel_edges_give_two_paths() {
        let p = pigou();
        let paths = enumerate_paths(2, &p.edges, 0, 1, 8).unwrap();
        assert_eq!(paths, vec![Path(vec![0]), Path(vec![1])]);
    }

    #[test]
    fn braess_has_three_paths_in_edge_order() {
        let paths = enumerate_paths(4, &braess_edges(), 0, 3, 64).unwrap();
        assert_eq!(paths, vec![Path(vec![0, 2, 4]), Path(vec![0, 3]), Path(vec![1, 4])]);
    }

    #[test]
    fn path_cap_is_enforced() {
        let err = enumerate_paths(4, &braess_edges(), 0, 3, 2).unwrap_err();
        assert!(matches!(err, NetworkError::PathExplosion { cap: 2, .. }));
        assert!(enumerate_paths(4, &braess_edges(), 0, 3, 3).is_ok());
    }

    #[test]
    fn unreachable_sink_is_no_path() {
        let err = enumerate_paths(4, &braess_edges(), 3, 0, 64).unwrap_err();
        assert!(matches!(err, NetworkError::NoPath { .. }));
    }

    #[test]
    fn classes_of_canonical_networks() {
        assert_eq!(classify(&pigou()), NetworkClass::Parallel);
        assert!(classification(&pigou()).symmetric);
        assert_eq!(classify(&braess()), NetworkClass::Symmetric);

        let mut two = braess();
        two.commodities = vec![
            Commodity { source: 0, sink: 3, rate: 0.5, paths: vec![Path(vec![0, 3])] },
            Commodity { source: 0, sink: 2, rate: 0.5, paths: vec![Path(vec![1])] },
        ];
        assert!(validate_problem(&two).is_empty());
        assert_eq!(classify(&two), NetworkClass::General);
    }

    #[test]
    fn pigou_total_latency() {
        let p = pigou();
        let f = FlowAssignment::from_path_flows(vec![vec![1.0, 0.0]]);
        assert_eq!(total_latency(&p, &f).unwrap(), 1.0);
        let f = FlowAssignment::from_path_flows(vec![vec![0.5, 0.5]]);
        assert_eq!(total_latency(&p, &f).unwrap(), 0.75);
        assert_eq!(total_latency_by_paths(&p, &f).unwrap(), 0.75);
    }

    #[test]
    fn braess_zigzag_latency() {
        let p = braess();
        let f = FlowAssignment::from_path_flows(vec![vec![1.0, 0.0, 0.0]]);
        assert_eq!(f.edge_flows(&p), vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(total_latency(&p, &f).unwrap(), 2.0);
        let edge_flows = f.edge_flows(&p);
        assert_eq!(path_latency(&p, &Path(vec![0, 2, 4]), &edge_flows), 2.0);
    }

    #[test]
    fn path_latency_examples() {
        let p = pigou();
        assert_eq!(path_latency(&p, &Path(vec![1]), &[0.7, 0.3]), 1.0);
        assert_eq!(path_latency(&p, &Path(vec![0]), &[0.25, 0.75]), 0.25);
    }

    #[test]
    fn infeasible_flow_is_rejected() {
        let p = pigou();
        let f = FlowAssignment::from_path_flows(vec![vec![0.6, 0.6]]);
        assert!(matches!(total_latency(&p, &f), Err(NetworkError::InfeasibleFlow(_))));
        let f = FlowAssignment::from_path_flows(vec![vec![1.5, -0.5]]);
        assert!(matches!(total_latency(&p, &f), Err(NetworkError::InfeasibleFlow(_))));
        // drift inside the tolerance is accepted
        let f = FlowAssignment::from_path_flows(vec![vec![0.5 + 1e-12, 0.5]]);
        assert!(total_latency(&p, &f).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_graph() -> impl Strategy<Value = (usize, Vec<Edge>)> {
            (3usize..6).prop_flat_map(|n| {
                let edge = (0..n, 0..n, 0.0..2.0f64, 1u32..4, 0.0..2.0f64)
                    .prop_map(|(t, h, a, d, b)| Edge::new(t, h, Latency::new(a, d, b)));
                (Just(n), proptest::collection::vec(edge, 2..12))
            })
        }

        proptest! {
            #[test]
            fn enumeration_is_deterministic_and_simple((n, edges) in random_graph()) {
                let sink = n - 1;
                let Ok(paths) = enumerate_paths(n, &edges, 0, sink, 10_000) else { return Ok(()) };
                prop_assert_eq!(&paths, &enumerate_paths(n, &edges, 0, sink, 10_000).unwrap());
                let mut sorted = paths.clone();
                sorted.sort();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), paths.len());
                for path in &paths {
                    let mut at = 0;
                    let mut seen = vec![at];
                    for &e in path.edges() {
                        prop_assert_eq!(edges[e].tail, at);
                        at = edges[e].head;
                        prop_assert!(!seen.contains(&at));
                        seen.push(at);
                    }
                    prop_assert_eq!(at, sink);
                }
            }

            #[test]
            fn edge_and_path_totals_agree((n, edges) in random_graph(), weights in proptest::collection::vec(0.0..1.0f64, 64), rate in 0.1..3.0f64) {
                let sink = n - 1;
                let Ok(paths) = enumerate_paths(n, &edges, 0, sink, 64) else { return Ok(()) };
                let w = &weights[..paths.len()];
                let total: f64 = w.iter().sum::<f64>() + 1e-3;
                let flows: Vec<f64> = w.iter().map(|x| rate * (x + 1e-3 / w.len() as f64) / total).collect();
                let problem = RoutingProblem {
                    name: "random".into(),
                    nodes: (0..n).map(|i| i.to_string()).collect(),
                    edges,
                    commodities: vec![Commodity { source: 0, sink, rate, paths }],
                };
                let flow = FlowAssignment::from_path_flows(vec![flows]);
                let by_edges = total_latency(&problem, &flow).unwrap();
                let by_paths = total_latency_by_paths(&problem, &flow).unwrap();
                prop_assert!((by_edges - by_paths).abs() <= 1e-12 * by_edges.max(1.0));
            }

            #[test]
            fn parallel_links_are_disjoint(links in 2usize..8) {
                let edges: Vec<Edge> = (0..links).map(|i| Edge::new(0, 1, Latency::linear(1.0, i as f64))).collect();
                let paths = enumerate_paths(2, &edges, 0, 1, 64).unwrap();
                prop_assert_eq!(paths.len(), links);
                for (i, p) in paths.iter().enumerate() {
                    for q in &paths[i + 1..] {
                        prop_assert!(p.is_disjoint(q));
                    }
                }
            }
        }
    }
}
