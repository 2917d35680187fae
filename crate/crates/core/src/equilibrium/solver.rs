//! Conditional-gradient minimization over a product of scaled simplices.
//!
//! Variables are path flows `x[c][k][p]`; each class `(c, k)` must route its
//! mass over its commodity's paths. The objective is
//! `sum_e F_e(f_e) + sum x[c][k][p] * offset[c][k][p]` with convex `F_e`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EquilibriumError;
use crate::network::{FlowAssignment, Latency, RoutingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Minimize along the search direction by bisection on the directional derivative.
    ExactLineSearch,
    /// Step `2 / (iteration + 2)`.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionRule {
    /// For each class in turn, shift mass from its costliest used path to
    /// its cheapest path.
    Pairwise,
    /// Classic Frank-Wolfe: move every class toward the all-or-nothing
    /// assignment on its cheapest paths.
    AllOrNothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialFlow {
    /// All mass of every class on its lowest-index path.
    LowestIndexPath,
    /// A random interior point drawn from `seed`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Target relative duality gap.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    pub direction: DirectionRule,
    pub initial_flow: InitialFlow,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200_000,
            step_rule: StepRule::ExactLineSearch,
            direction: DirectionRule::Pairwise,
            initial_flow: InitialFlow::LowestIndexPath,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn validate(&self) -> Result<(), EquilibriumError> {
        if !(self.tolerance > 0.0) {
            return Err(EquilibriumError::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(EquilibriumError::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Convex per-edge term `F_e` of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EdgeTerm {
    /// `int_0^x l_e`, slope `l_e(x)`.
    Beckmann,
    /// `a x^{d+1} / (d+1)`, slope `a x^d`.
    CongestionOnly,
    /// `x l_e(x)`, slope `l_e(x) + x l_e'(x)`.
    SystemCost,
}

impl EdgeTerm {
    #[inline]
    fn value(self, l: &Latency, x: f64) -> f64 {
        match self {
            EdgeTerm::Beckmann => l.integral(x),
            EdgeTerm::CongestionOnly => l.integral(x) - l.b * x,
            EdgeTerm::SystemCost => x * l.eval(x),
        }
    }

    fn curvature(self, l: &Latency, x: f64) -> f64 {
        match self {
            EdgeTerm::Beckmann | EdgeTerm::CongestionOnly => l.derivative(x),
            EdgeTerm::SystemCost => f64::from(l.degree + 1) * l.derivative(x),
        }
    }

    #[inline]
    fn slope(self, l: &Latency, x: f64) -> f64 {
        match self {
            EdgeTerm::Beckmann => l.eval(x),
            EdgeTerm::CongestionOnly => l.congestion(x),
            EdgeTerm::SystemCost => l.marginal_cost(x),
        }
    }
}

pub(crate) struct Objective<'a> {
    problem: &'a RoutingProblem,
    term: EdgeTerm,
    masses: Vec<Vec<f64>>,
    offsets: Vec<Vec<Vec<f64>>>,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(
        problem: &'a RoutingProblem,
        term: EdgeTerm,
        masses: Vec<Vec<f64>>,
        offsets: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        Self { problem, term, masses, offsets }
    }

    pub(crate) fn value(&self, x: &[Vec<Vec<f64>>], edge_flows: &[f64]) -> f64 {
        let edge_part: f64 = self
            .problem
            .edges
            .iter()
            .zip(edge_flows)
            .map(|(e, &f)| self.term.value(&e.latency, f))
            .sum();
        let linear: f64 = x
            .iter()
            .zip(&self.offsets)
            .flat_map(|(xc, oc)| xc.iter().zip(oc))
            .flat_map(|(xk, ok)| xk.iter().zip(ok))
            .map(|(f, o)| f * o)
            .sum();
        edge_part + linear
    }

    #[inline]
    fn gradient(&self, c: usize, k: usize, p: usize, edge_flows: &[f64]) -> f64 {
        let path = &self.problem.commodities[c].paths[p];
        let edges = &self.problem.edges;
        path.edges()
            .iter()
            .map(|&e| self.term.slope(&edges[e].latency, edge_flows[e]))
            .sum::<f64>()
            + self.offsets[c][k][p]
    }

    fn edge_flows(&self, x: &[Vec<Vec<f64>>]) -> Vec<f64> {
        let mut flows = vec![0.0; self.problem.edges.len()];
        for (c, commodity) in self.problem.commodities.iter().enumerate() {
            for (p, path) in commodity.paths.iter().enumerate() {
                let fp: f64 = x[c].iter().map(|k| k[p]).sum();
                for &e in path.edges() {
                    flows[e] += fp;
                }
            }
        }
        flows
    }

    /// Directional derivative `sum_e delta_e F_e'(f_e + t delta_e) + linear`.
    fn slope_along(&self, edge_flows: &[f64], delta: &[(usize, f64)], linear: f64, t: f64) -> f64 {
        let edges = &self.problem.edges;
        delta
            .iter()
            .map(|&(e, d)| d * self.term.slope(&edges[e].latency, edge_flows[e] + t * d))
            .sum::<f64>()
            + linear
    }
}

pub(crate) struct Outcome {
    pub(crate) flow: FlowAssignment,
    pub(crate) value: f64,
    pub(crate) relative_gap: f64,
    pub(crate) absolute_gap: f64,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
}

fn initial_flow(objective: &Objective<'_>, config: &SolverConfig) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    objective
        .problem
        .commodities
        .iter()
        .zip(&objective.masses)
        .map(|(commodity, masses)| {
            let n = commodity.paths.len();
            masses
                .iter()
                .map(|&m| match config.initial_flow {
                    InitialFlow::LowestIndexPath => {
                        let mut v = vec![0.0; n];
                        v[0] = m;
                        v
                    }
                    InitialFlow::Random => {
                        let w: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
                        let total: f64 = w.iter().sum();
                        w.into_iter().map(|wi| m * wi / total).collect()
                    }
                })
                .collect()
        })
        .collect()
}

/// Lowest-index minimizer.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Smallest root of an increasing function on `[0, hi]`, or `hi` if it is
/// still nonpositive there.
fn line_search(hi: f64, slope: impl Fn(f64) -> f64) -> f64 {
    if slope(hi) <= 0.0 {
        return hi;
    }
    let (mut lo, mut up) = (0.0, hi);
    let width = 1e-14 * hi.max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        if up - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + up);
        if slope(mid) > 0.0 {
            up = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + up)
}

struct Gap {
    absolute: f64,
    value: f64,
    /// Largest `gradient - class minimum` over paths carrying more than
    /// `1e-9` of their class's mass.
    max_excess: f64,
    /// Largest `|class minimum gradient|`.
    cost_scale: f64,
}

fn evaluate(objective: &Objective<'_>, x: &[Vec<Vec<f64>>], edge_flows: &[f64]) -> Gap {
    let mut absolute = 0.0;
    let mut max_excess = 0.0f64;
    let mut cost_scale = 0.0f64;
    let mut grad = Vec::new();
    for (c, classes) in x.iter().enumerate() {
        for (k, xk) in classes.iter().enumerate() {
            grad.clear();
            grad.extend((0..xk.len()).map(|p| objective.gradient(c, k, p, edge_flows)));
            let min = grad[argmin(&grad)];
            cost_scale = cost_scale.max(min.abs());
            let used = objective.masses[c][k] * 1e-9;
            for (f, g) in xk.iter().zip(&grad) {
                absolute += f * (g - min);
                if *f > used {
                    max_excess = max_excess.max(g - min);
                }
            }
        }
    }
    Gap { absolute, value: objective.value(x, edge_flows), max_excess, cost_scale }
}

const STATIONARITY_FLOOR: f64 = 1e-9;

/// Newton steps are skipped when more path variables are active than this.
const MAX_NEWTON_DIMENSION: usize = 400;
const NEWTON_REGULARIZATION: f64 = 1e-10;

pub(crate) fn minimize(objective: &Objective<'_>, config: &SolverConfig) -> Outcome {
    let mut x = initial_flow(objective, config);
    let mut iterations = 0;
    loop {
        let edge_flows = objective.edge_flows(&x);
        let gap = evaluate(objective, &x, &edge_flows);
        let relative_gap = gap.absolute / (gap.value.abs() + 1.0);
        // a small gap can hide a tiny flow on a clearly worse path; require
        // near-stationarity on every used path as well
        let scale = gap.cost_scale.max(gap.value.abs() + 1.0);
        let stationary = gap.max_excess <= (5.0 * relative_gap * scale).max(STATIONARITY_FLOOR);
        let converged = relative_gap <= config.tolerance && stationary;
        if converged || iterations >= config.max_iterations {
            return Outcome {
                flow: FlowAssignment::new(x),
                value: gap.value,
                relative_gap,
                absolute_gap: gap.absolute,
                iterations,
                converged,
            };
        }
        match config.direction {
            DirectionRule::Pairwise => {
                pairwise_sweep(objective, config, iterations, &mut x, edge_flows);
                if config.step_rule == StepRule::ExactLineSearch {
                    newton_step(objective, &mut x);
                }
            }
            DirectionRule::AllOrNothing => all_or_nothing_step(objective, config, iterations, &mut x, &edge_flows),
        }
        iterations += 1;
    }
}

fn step_length(config: &SolverConfig, iteration: usize, hi: f64, slope: impl Fn(f64) -> f64) -> f64 {
    match config.step_rule {
        StepRule::ExactLineSearch => {
            let t = line_search(hi, slope);
            if t.is_finite() {
                t
            } else {
                hi * 2.0 / (iteration as f64 + 2.0)
            }
        }
        StepRule::Harmonic => hi * (2.0 / (iteration as f64 + 2.0)).min(1.0),
    }
}

// indices are needed because `x` is mutated in place inside the loop
#[allow(clippy::needless_range_loop)]
fn pairwise_sweep(
    objective: &Objective<'_>,
    config: &SolverConfig,
    iteration: usize,
    x: &mut [Vec<Vec<f64>>],
    mut edge_flows: Vec<f64>,
) {
    let problem = objective.problem;
    let mut grad = Vec::new();
    let mut delta: Vec<(usize, f64)> = Vec::new();
    for c in 0..x.len() {
        let paths = &problem.commodities[c].paths;
        for k in 0..x[c].len() {
            for _ in 0..paths.len() {
                let xk = &x[c][k];
                grad.clear();
                grad.extend((0..xk.len()).map(|p| objective.gradient(c, k, p, &edge_flows)));
                let to = argmin(&grad);
                let from = (0..xk.len())
                    .filter(|&p| xk[p] > 0.0)
                    .fold(None, |best: Option<usize>, p| match best {
                        Some(b) if grad[b] >= grad[p] => Some(b),
                        _ => Some(p),
                    });
                let Some(from) = from else { break };
                if from == to || grad[from] <= grad[to] {
                    break;
                }
                delta.clear();
                for &e in paths[to].edges() {
                    if !paths[from].contains(e) {
                        delta.push((e, 1.0));
                    }
                }
                for &e in paths[from].edges() {
                    if !paths[to].contains(e) {
                        delta.push((e, -1.0));
                    }
                }
                let linear = objective.offsets[c][k][to] - objective.offsets[c][k][from];
                let available = xk[from];
                let shift = step_length(config, iteration, available, |t| {
                    objective.slope_along(&edge_flows, &delta, linear, t)
                });
                if !(shift > 0.0) {
                    break;
                }
                let xk = &mut x[c][k];
                if shift >= available {
                    xk[to] += available;
                    xk[from] = 0.0;
                } else {
                    xk[to] += shift;
                    xk[from] -= shift;
                }
                let moved = shift.min(available);
                for &(e, d) in &delta {
                    edge_flows[e] = (edge_flows[e] + d * moved).max(0.0);
                }
            }
        }
    }
}

/// Regularized Newton step over the paths each class uses, followed by a
/// ratio test and exact line search.
///
/// Per-class moves cannot follow directions that shift several classes at
/// once while leaving edge flows unchanged (two commodities trading paths
/// over shared edges); along such directions the objective is linear, the
/// regularized step is long, and the ratio test carries it to the boundary.
fn newton_step(objective: &Objective<'_>, x: &mut [Vec<Vec<f64>>]) {
    let problem = objective.problem;
    let edge_flows = objective.edge_flows(x);
    // (commodity, class, path, reference path)
    let mut vars = Vec::new();
    let mut grad = Vec::new();
    for (c, xc) in x.iter().enumerate() {
        for (k, xk) in xc.iter().enumerate() {
            let g: Vec<f64> = (0..xk.len()).map(|p| objective.gradient(c, k, p, &edge_flows)).collect();
            let r = argmin(&g);
            for p in 0..xk.len() {
                if p != r && xk[p] > 0.0 {
                    vars.push((c, k, p, r));
                    grad.push(g[p] - g[r]);
                }
            }
        }
    }
    let n = vars.len();
    if n == 0 || n > MAX_NEWTON_DIMENSION {
        return;
    }
    let edge_count = problem.edges.len();
    let incidence: Vec<Vec<f64>> = vars
        .iter()
        .map(|&(c, _, p, r)| {
            let paths = &problem.commodities[c].paths;
            let mut row = vec![0.0; edge_count];
            for &e in paths[p].edges() {
                row[e] += 1.0;
            }
            for &e in paths[r].edges() {
                row[e] -= 1.0;
            }
            row
        })
        .collect();
    let curvature: Vec<f64> = problem
        .edges
        .iter()
        .zip(&edge_flows)
        .map(|(e, &f)| objective.term.curvature(&e.latency, f))
        .collect();
    let mut hessian = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let h: f64 = (0..edge_count).map(|e| incidence[i][e] * incidence[j][e] * curvature[e]).sum();
            hessian[(i, j)] = h;
            hessian[(j, i)] = h;
        }
    }
    let scale = (0..n).map(|i| hessian[(i, i)]).fold(1.0, f64::max);
    for i in 0..n {
        hessian[(i, i)] += NEWTON_REGULARIZATION * scale;
    }
    let Some(chol) = hessian.cholesky() else { return };
    let step = chol.solve(&DVector::from_iterator(n, grad.iter().map(|g| -g)));

    let mut direction: Vec<Vec<Vec<f64>>> = x.iter().map(|xc| xc.iter().map(|xk| vec![0.0; xk.len()]).collect()).collect();
    for (i, &(c, k, p, r)) in vars.iter().enumerate() {
        direction[c][k][p] += step[i];
        direction[c][k][r] -= step[i];
    }
    let mut limit: f64 = 1.0;
    let mut linear = 0.0;
    for (c, dc) in direction.iter().enumerate() {
        for (k, dk) in dc.iter().enumerate() {
            for (p, &d) in dk.iter().enumerate() {
                linear += d * objective.offsets[c][k][p];
                if d < 0.0 {
                    limit = limit.min(x[c][k][p] / -d);
                }
            }
        }
    }
    let delta: Vec<(usize, f64)> = objective
        .edge_flows(&direction)
        .into_iter()
        .enumerate()
        .filter(|(_, d)| *d != 0.0)
        .collect();
    let slope = |t: f64| objective.slope_along(&edge_flows, &delta, linear, t);
    if !(limit > 0.0) || !(slope(0.0) < 0.0) {
        return;
    }
    let t = line_search(limit, slope);
    for (c, dc) in direction.iter().enumerate() {
        for (k, dk) in dc.iter().enumerate() {
            for (p, &d) in dk.iter().enumerate() {
                let v = &mut x[c][k][p];
                // the blocking path lands on exactly zero
                *v = if d < 0.0 && t >= *v / -d { 0.0 } else { (*v + t * d).max(0.0) };
            }
        }
    }
}

fn all_or_nothing_step(
    objective: &Objective<'_>,
    config: &SolverConfig,
    iteration: usize,
    x: &mut [Vec<Vec<f64>>],
    edge_flows: &[f64],
) {
    let problem = objective.problem;
    let mut targets = Vec::new();
    let mut direction_edges = vec![0.0; problem.edges.len()];
    let mut linear = 0.0;
    let mut grad = Vec::new();
    for (c, classes) in x.iter().enumerate() {
        let paths = &problem.commodities[c].paths;
        for (k, xk) in classes.iter().enumerate() {
            grad.clear();
            grad.extend((0..xk.len()).map(|p| objective.gradient(c, k, p, edge_flows)));
            let target = argmin(&grad);
            let mass = objective.masses[c][k];
            for (p, &f) in xk.iter().enumerate() {
                let d = if p == target { mass - f } else { -f };
                linear += d * objective.offsets[c][k][p];
                for &e in paths[p].edges() {
                    direction_edges[e] += d;
                }
            }
            targets.push(target);
        }
    }
    let delta: Vec<(usize, f64)> =
        direction_edges.iter().enumerate().filter(|(_, d)| **d != 0.0).map(|(e, d)| (e, *d)).collect();
    let t = step_length(config, iteration, 1.0, |t| objective.slope_along(edge_flows, &delta, linear, t));
    let mut targets = targets.into_iter();
    for (c, classes) in x.iter_mut().enumerate() {
        for (k, xk) in classes.iter_mut().enumerate() {
            let target = targets.next().expect("one target per class");
            let mass = objective.masses[c][k];
            for (p, f) in xk.iter_mut().enumerate() {
                let aim = if p == target { mass } else { 0.0 };
                *f = (*f + t * (aim - *f)).max(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_search_finds_root() {
        let t = line_search(1.0, |t| t - 0.3);
        assert!((t - 0.3).abs() < 1e-13);
        assert_eq!(line_search(1.0, |t| t - 2.0), 1.0);
    }

    #[test]
    fn argmin_breaks_ties_low() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        assert_eq!(argmin(&[0.0, 0.0]), 0);
    }
}
