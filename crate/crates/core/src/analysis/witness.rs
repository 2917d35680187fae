//! Bounded searches for instances on which a signal is perverse.
//!
//! Every candidate is decoded from a point of the unit cube with a fixed
//! coordinate layout, so the grid and random strategies share one decoder
//! and each candidate depends only on `(seed, index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{perversity_ratio, AnalysisError, PerversityRecord};
use crate::equilibrium::SolverConfig;
use crate::io::builtin::{braess_network, parallel_links};
use crate::network::{Latency, RoutingProblem};
use crate::population::{SensitivityClass, SensitivityProfile};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `u = 0` maps to `hi` so that open-at-`lo` ranges are respected by
    /// random draws in `[0, 1)`.
    fn at(&self, u: f64) -> f64 {
        self.hi - u * (self.hi - self.lo)
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FamilyKind {
    TwoLinkParallel,
    KLinkParallel { min_links: usize, max_links: usize },
    /// The Braess graph with an `s -> t` commodity and, if `cross_traffic`,
    /// a second commodity `v -> t` with its own sensitivities.
    Braess { cross_traffic: bool },
}

impl FamilyKind {
    fn max_edges(&self) -> usize {
        match *self {
            FamilyKind::TwoLinkParallel => 2,
            FamilyKind::KLinkParallel { max_links, .. } => max_links,
            FamilyKind::Braess { .. } => 5,
        }
    }

    fn max_commodities(&self) -> usize {
        match *self {
            FamilyKind::Braess { cross_traffic: true } => 2,
            _ => 1,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            FamilyKind::TwoLinkParallel => "two-link-parallel",
            FamilyKind::KLinkParallel { .. } => "k-link-parallel",
            FamilyKind::Braess { .. } => "braess",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    pub a: Interval,
    pub b: Interval,
    pub rate: Interval,
    pub beta: Interval,
    pub min_classes: usize,
    pub max_classes: usize,
    /// Common latency degree of every edge.
    pub degree: u32,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            a: Interval::new(0.0, 2.0),
            b: Interval::new(0.0, 2.0),
            rate: Interval::new(0.0, 2.0),
            beta: Interval::new(0.0, 1.0),
            min_classes: 1,
            max_classes: 3,
            degree: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy")]
pub enum SearchStrategy {
    /// Independent uniform draws.
    Random,
    /// Cell midpoints of a lattice with `points_per_axis` cells per
    /// coordinate. When the lattice is larger than the budget it is visited
    /// with a constant stride.
    Grid { points_per_axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessFamily {
    pub kind: FamilyKind,
    pub ranges: ParameterRanges,
    pub strategy: SearchStrategy,
    pub seed: u64,
    pub budget: usize,
    /// Extra candidates spent perturbing the best point found so far.
    #[serde(default)]
    pub refinement: usize,
}

impl WitnessFamily {
    pub fn new(kind: FamilyKind, ranges: ParameterRanges) -> Self {
        Self { kind, ranges, strategy: SearchStrategy::Random, seed: 0, budget: 1000, refinement: 0 }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_strategy(mut self, strategy: SearchStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_refinement(mut self, refinement: usize) -> Self {
        self.refinement = refinement;
        self
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidFamily(m.to_string()));
        let r = &self.ranges;
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        for (name, iv) in [("a", r.a), ("b", r.b), ("rate", r.rate), ("beta", r.beta)] {
            if !iv.is_valid() || iv.lo < 0.0 {
                return bad(&format!("range {name} must be a nonempty nonnegative interval"));
            }
        }
        if r.rate.hi <= 0.0 {
            return bad("rate range must contain positive values");
        }
        if r.beta.hi > 1.0 {
            return bad("beta range must lie in [0, 1]");
        }
        if r.min_classes == 0 || r.min_classes > r.max_classes {
            return bad("class counts must satisfy 1 <= min_classes <= max_classes");
        }
        if r.degree == 0 {
            return bad("degree must be at least 1");
        }
        if let FamilyKind::KLinkParallel { min_links, max_links } = self.kind {
            if min_links < 2 || min_links > max_links {
                return bad("link counts must satisfy 2 <= min_links <= max_links");
            }
        }
        if let SearchStrategy::Grid { points_per_axis } = self.strategy {
            if points_per_axis == 0 {
                return bad("grid needs at least one point per axis");
            }
        }
        Ok(())
    }

    /// Instance of the `index`-th base candidate.
    pub fn candidate(&self, index: usize) -> Result<(RoutingProblem, SensitivityProfile), AnalysisError> {
        self.validate()?;
        self.decode(&self.point(index)?, index)
    }

    /// Number of unit-cube coordinates a candidate consumes.
    fn dimension(&self) -> usize {
        1 + self.kind.max_commodities() * (2 + 2 * self.ranges.max_classes) + 2 * self.kind.max_edges()
    }

    fn decode(&self, u: &[f64], index: usize) -> Result<(RoutingProblem, SensitivityProfile), AnalysisError> {
        let r = &self.ranges;
        let pick = |u: f64, lo: usize, hi: usize| lo + ((u * (hi - lo + 1) as f64) as usize).min(hi - lo);
        let mut it = u.iter().copied();
        let mut next = move || it.next().expect("coordinate layout matches dimension");

        let link_u = next();
        let edges = match self.kind {
            FamilyKind::KLinkParallel { min_links, max_links } => pick(link_u, min_links, max_links),
            _ => self.kind.max_edges(),
        };
        let mut latencies = Vec::with_capacity(edges);
        for e in 0..self.kind.max_edges() {
            let (ua, ub) = (next(), next());
            if e < edges {
                latencies.push(Latency::new(r.a.at(ua), r.degree, r.b.at(ub)));
            }
        }
        let mut rates = Vec::new();
        let mut profile = Vec::new();
        for _ in 0..self.kind.max_commodities() {
            let rate = r.rate.at(next());
            let count = pick(next(), r.min_classes, r.max_classes);
            let mut draws = Vec::new();
            for k in 0..r.max_classes {
                let (ub, uw) = (next(), next());
                if k < count {
                    draws.push((r.beta.at(ub), 0.1 + 0.9 * (1.0 - uw)));
                }
            }
            let total: f64 = draws.iter().map(|d| d.1).sum();
            rates.push(rate);
            profile.push(draws.into_iter().map(|(beta, w)| SensitivityClass::new(beta, rate * w / total)).collect::<Vec<_>>());
        }
        let name = format!("{}-{}-{}", self.kind.label(), self.seed, index);
        let mut problem = match self.kind {
            FamilyKind::Braess { cross_traffic } => {
                let l: [Latency; 5] = latencies.try_into().expect("five Braess edges");
                braess_network(l, rates[0], cross_traffic.then(|| rates[1])).map_err(crate::equilibrium::EquilibriumError::from)?
            }
            _ => parallel_links(&name, &latencies, rates[0]),
        };
        problem.name = name;
        // floating-point class masses may not add back to the rate exactly
        for (c, classes) in profile.iter().enumerate() {
            problem.commodities[c].rate = classes.iter().map(|k| k.mass).sum();
        }
        let profile = SensitivityProfile::new(profile).map_err(crate::equilibrium::EquilibriumError::from)?;
        Ok((problem, profile))
    }

    fn point(&self, index: usize) -> Result<Vec<f64>, AnalysisError> {
        let dim = self.dimension();
        match self.strategy {
            SearchStrategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(index as u64);
                Ok((0..dim).map(|_| rng.gen::<f64>()).collect())
            }
            SearchStrategy::Grid { points_per_axis: n } => {
                let cells = (n as u128)
                    .checked_pow(dim as u32)
                    .ok_or_else(|| AnalysisError::InvalidFamily(format!("grid of {n}^{dim} points is too large")))?;
                let stride = (cells / self.budget as u128).max(1);
                let mut cell = (index as u128 * stride) % cells;
                let mut u = Vec::with_capacity(dim);
                for _ in 0..dim {
                    let digit = (cell % n as u128) as f64;
                    cell /= n as u128;
                    u.push((digit + 0.5) / n as f64);
                }
                Ok(u)
            }
        }
    }
}

/// Outcome of evaluating one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub index: usize,
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

/// Every candidate's outcome, in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub outcomes: Vec<CandidateOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub evaluated: usize,
    pub failed: usize,
    /// Candidates with ratio above `1 + 1e-9`.
    pub perverse: usize,
    pub best_ratio: f64,
    pub worst_ratio: f64,
    pub mean_ratio: f64,
    /// Up to ten best `(index, ratio)` pairs.
    pub top: Vec<(usize, f64)>,
}

impl SearchTrace {
    pub fn summary(&self) -> TraceSummary {
        let ok: Vec<(usize, f64)> = self.outcomes.iter().filter_map(|o| o.ratio.map(|r| (o.index, r))).collect();
        let mut top = ok.clone();
        top.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        top.truncate(10);
        let n = ok.len().max(1) as f64;
        TraceSummary {
            evaluated: self.outcomes.len(),
            failed: self.outcomes.len() - ok.len(),
            perverse: ok.iter().filter(|(_, r)| *r > 1.0 + 1e-9).count(),
            best_ratio: ok.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max),
            worst_ratio: ok.iter().map(|o| o.1).fold(f64::INFINITY, f64::min),
            mean_ratio: ok.iter().map(|o| o.1).sum::<f64>() / n,
            top,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub index: usize,
    pub problem: RoutingProblem,
    pub profile: SensitivityProfile,
    pub record: PerversityRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub family: WitnessFamily,
    pub gamma: f64,
    pub best: Witness,
    pub trace: SearchTrace,
}

struct Evaluated {
    u: Vec<f64>,
    outcome: Result<(RoutingProblem, SensitivityProfile, PerversityRecord), String>,
}

fn evaluate(family: &WitnessFamily, u: Vec<f64>, index: usize, gamma: f64, config: &SolverConfig) -> Evaluated {
    let outcome = family
        .decode(&u, index)
        .and_then(|(p, prof)| perversity_ratio(&p, &prof, gamma, config).map(|rec| (p, prof, rec)))
        .map_err(|e| e.to_string());
    Evaluated { u, outcome }
}

/// Candidate with the largest ratio; ties go to the lowest index.
fn best_of(batch: &[Evaluated], offset: usize) -> Option<(usize, f64)> {
    batch
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.outcome.as_ref().ok().map(|o| (offset + i, o.2.ratio)))
        .fold(None, |best, (i, r)| match best {
            Some((_, br)) if br >= r => best,
            _ => Some((i, r)),
        })
}

/// Evaluates `family.budget` candidates, then `family.refinement` local
/// perturbations of the incumbent, and returns the largest perversity ratio.
///
/// The result does not depend on `workers`.
pub fn search_perverse_witness(
    family: &WitnessFamily,
    gamma: f64,
    config: &SolverConfig,
    workers: usize,
) -> Result<WitnessReport, AnalysisError> {
    family.validate()?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(AnalysisError::PreconditionViolated(format!("signal must be positive, got {gamma}")));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AnalysisError::InvalidFamily(format!("cannot start workers: {e}")))?;

    let points = (0..family.budget).map(|i| family.point(i)).collect::<Result<Vec<_>, _>>()?;
    let mut all: Vec<Evaluated> = pool.install(|| {
        points.into_par_iter().enumerate().map(|(i, u)| evaluate(family, u, i, gamma, config)).collect()
    });

    if family.refinement > 0 {
        refine(family, gamma, config, &pool, &mut all);
    }

    let trace = SearchTrace {
        outcomes: all
            .iter()
            .enumerate()
            .map(|(index, e)| match &e.outcome {
                Ok(o) => CandidateOutcome { index, ratio: Some(o.2.ratio), error: None },
                Err(msg) => CandidateOutcome { index, ratio: None, error: Some(msg.clone()) },
            })
            .collect(),
    };
    let (index, _) = best_of(&all, 0).ok_or(AnalysisError::NoCandidates { failed: all.len() })?;
    let (problem, profile, record) = all.swap_remove(index).outcome.expect("best candidate solved");
    Ok(WitnessReport { family: family.clone(), gamma, best: Witness { index, problem, profile, record }, trace })
}

const REFINE_BATCH: usize = 32;

/// Batched random perturbation of the incumbent with a shrinking step.
fn refine(family: &WitnessFamily, gamma: f64, config: &SolverConfig, pool: &rayon::ThreadPool, all: &mut Vec<Evaluated>) {
    let Some((mut incumbent, mut best)) = best_of(all, 0) else { return };
    let mut step = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(family.seed);
    rng.set_stream(u64::MAX);
    let mut remaining = family.refinement;
    while remaining > 0 {
        let size = remaining.min(REFINE_BATCH);
        let base = all[incumbent].u.clone();
        let offset = all.len();
        let points: Vec<Vec<f64>> = (0..size)
            .map(|_| base.iter().map(|&x| (x + step * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0 - 1e-12)).collect())
            .collect();
        let batch: Vec<Evaluated> = pool.install(|| {
            points.into_par_iter().enumerate().map(|(i, u)| evaluate(family, u, offset + i, gamma, config)).collect()
        });
        match best_of(&batch, offset) {
            Some((i, r)) if r > best => {
                incumbent = i;
                best = r;
            }
            _ => step = (step * 0.5).max(1e-4),
        }
        all.extend(batch);
        remaining -= size;
    }
}
