//! Independent reference solutions used to check the iterative solver.

use serde::{Deserialize, Serialize};

use super::{potential, EquilibriumError, PerceivedCostContext};
use crate::network::FlowAssignment;
use crate::population::SensitivityClass;

/// Exact equilibrium split on two parallel linear links, per input class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkFlow {
    /// `[flow on link 1, flow on link 2]` for each class, in input order.
    pub class_flows: Vec<[f64; 2]>,
}

impl TwoLinkFlow {
    pub fn edge_flows(&self) -> [f64; 2] {
        self.class_flows
            .iter()
            .fold([0.0, 0.0], |acc, f| [acc[0] + f[0], acc[1] + f[1]])
    }

    /// As a flow on a single-commodity problem whose paths are the two links.
    pub fn to_assignment(&self) -> FlowAssignment {
        FlowAssignment::new(vec![self.class_flows.iter().map(|f| f.to_vec()).collect()])
    }
}

/// Closed-form potential minimizer for links `l_i(x) = a_i x + b_i`.
///
/// Class `k` prefers link 1 exactly when
/// `(a_1 + a_2) f_1 - a_2 r < (1 - gamma beta_k)(b_2 - b_1)`; the left side is
/// increasing in `f_1`, so ordering classes by their right-hand threshold and
/// filling link 1 in that order locates the (at most one) class that splits.
pub fn two_link_oracle(
    a1: f64,
    b1: f64,
    a2: f64,
    b2: f64,
    classes: &[SensitivityClass],
    gamma: f64,
) -> Result<TwoLinkFlow, EquilibriumError> {
    if [a1, b1, a2, b2].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(EquilibriumError::InvalidInput("coefficients must be finite and nonnegative".into()));
    }
    if classes.is_empty() || classes.iter().any(|k| !(k.mass > 0.0)) {
        return Err(EquilibriumError::InvalidInput("need at least one class with positive mass".into()));
    }
    let rate: f64 = classes.iter().map(|k| k.mass).sum();
    let thresholds: Vec<f64> = classes.iter().map(|k| (1.0 - gamma * k.beta) * (b2 - b1)).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&i, &j| thresholds[j].total_cmp(&thresholds[i]).then(i.cmp(&j)));

    let mut class_flows = vec![[0.0, 0.0]; classes.len()];
    let slope = a1 + a2;

    if slope == 0.0 {
        let mut tie = false;
        for (i, class) in classes.iter().enumerate() {
            if thresholds[i] >= 0.0 {
                tie |= thresholds[i] == 0.0;
                class_flows[i] = [class.mass, 0.0];
            } else {
                class_flows[i] = [0.0, class.mass];
            }
        }
        let flow = TwoLinkFlow { class_flows };
        return if tie { Err(EquilibriumError::DegenerateInstance { fallback: flow }) } else { Ok(flow) };
    }

    let h = |f1: f64| slope * f1 - a2 * rate;
    let mut filled = 0.0;
    for &i in &order {
        let mass = classes[i].mass;
        let theta = thresholds[i];
        if theta <= h(filled) {
            class_flows[i] = [0.0, mass];
        } else if theta < h(filled + mass) {
            let f1 = (theta + a2 * rate) / slope;
            let on_first = (f1 - filled).clamp(0.0, mass);
            class_flows[i] = [on_first, mass - on_first];
            filled += on_first;
        } else {
            class_flows[i] = [mass, 0.0];
            filled += mass;
        }
        // once some class stops short of link 1 every later class does too
        if class_flows[i][1] > 0.0 {
            filled = f64::INFINITY;
        }
    }
    Ok(TwoLinkFlow { class_flows })
}

/// Largest number of class-path flow variables the grid oracle accepts.
pub const MAX_BRUTE_FORCE_DIMENSION: usize = 6;
const MAX_GRID_POINTS: f64 = 5e7;

/// Minimizes the potential over a grid on each class's simplex, with spacing
/// `resolution` times the class mass.
pub fn brute_force_oracle(
    ctx: &PerceivedCostContext<'_>,
    resolution: f64,
) -> Result<FlowAssignment, EquilibriumError> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(EquilibriumError::InvalidInput(format!("resolution must lie in (0, 1], got {resolution}")));
    }
    let problem = ctx.problem();
    let profile = ctx.profile();
    let mut blocks = Vec::new();
    for (c, commodity) in problem.commodities.iter().enumerate() {
        for (k, class) in profile.classes(c).iter().enumerate() {
            blocks.push((c, k, commodity.paths.len(), class.mass));
        }
    }
    let dimension: usize = blocks.iter().map(|b| b.2).sum();
    if dimension > MAX_BRUTE_FORCE_DIMENSION {
        return Err(EquilibriumError::DimensionTooLarge { dimension, max: MAX_BRUTE_FORCE_DIMENSION });
    }
    let steps = (1.0 / resolution).round() as usize;
    let points: f64 = blocks.iter().map(|b| binomial(steps + b.2 - 1, b.2 - 1)).product();
    if points > MAX_GRID_POINTS {
        return Err(EquilibriumError::GridTooLarge { points });
    }

    let per_block: Vec<Vec<Vec<usize>>> = blocks.iter().map(|b| compositions(steps, b.2)).collect();
    let mut template: Vec<Vec<Vec<f64>>> = problem
        .commodities
        .iter()
        .enumerate()
        .map(|(c, commodity)| vec![vec![0.0; commodity.paths.len()]; profile.classes(c).len()])
        .collect();

    let mut choice = vec![0usize; blocks.len()];
    let mut best: Option<(f64, FlowAssignment)> = None;
    loop {
        for (b, &(c, k, _, mass)) in blocks.iter().enumerate() {
            let comp = &per_block[b][choice[b]];
            for (slot, &units) in template[c][k].iter_mut().zip(comp) {
                *slot = mass * units as f64 / steps as f64;
            }
        }
        let flow = FlowAssignment::new(template.clone());
        let value = potential(ctx, &flow)?;
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, flow));
        }
        // odometer over blocks
        let mut b = 0;
        loop {
            if b == blocks.len() {
                return Ok(best.expect("grid is nonempty").1);
            }
            choice[b] += 1;
            if choice[b] < per_block[b].len() {
                break;
            }
            choice[b] = 0;
            b += 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}
