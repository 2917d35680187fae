use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::network::{enumerate_paths, total_latency, Commodity, Edge, Latency};
use crate::population::SensitivityClass;

fn two_links(l1: Latency, l2: Latency, rate: f64) -> RoutingProblem {
    RoutingProblem {
        name: "two-link".into(),
        nodes: vec!["s".into(), "t".into()],
        edges: vec![Edge::new(0, 1, l1), Edge::new(0, 1, l2)],
        commodities: vec![Commodity {
            source: 0,
            sink: 1,
            rate,
            paths: vec![Path(vec![0]), Path(vec![1])],
        }],
    }
}

fn pigou() -> RoutingProblem {
    two_links(Latency::linear(1.0, 0.0), Latency::constant(1.0), 1.0)
}

fn braess() -> RoutingProblem {
    let edges = vec![
        Edge::new(0, 1, Latency::linear(1.0, 0.0)),
        Edge::new(0, 2, Latency::constant(1.0)),
        Edge::new(1, 2, Latency::constant(0.0)),
        Edge::new(1, 3, Latency::constant(1.0)),
        Edge::new(2, 3, Latency::linear(1.0, 0.0)),
    ];
    let paths = enumerate_paths(4, &edges, 0, 3, 64).unwrap();
    RoutingProblem {
        name: "braess".into(),
        nodes: ["s", "v", "w", "t"].map(String::from).to_vec(),
        edges,
        commodities: vec![Commodity { source: 0, sink: 3, rate: 1.0, paths }],
    }
}

fn single(flows: &[f64]) -> FlowAssignment {
    FlowAssignment::from_path_flows(vec![flows.to_vec()])
}

#[test]
fn perceived_cost_examples() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.5).unwrap();
    assert_eq!(ctx.perceived_cost(0, 0, &Path(vec![1]), &[0.2, 0.8]), 0.5);
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.9).unwrap();
    assert_eq!(ctx.perceived_cost(0, 0, &Path(vec![0]), &[0.3, 0.7]), 0.3);

    // emulated cost (1 + d alpha) a f^d + b with alpha = 1: beta = 0.5, gamma = 1, d = 1
    let q = two_links(Latency::linear(1.0, 2.0), Latency::linear(1.0, 0.0), 1.0);
    let prof = SensitivityProfile::homogeneous(&q, 0.5).unwrap();
    let ctx =
        PerceivedCostContext::new(&q, &prof, Signal::new(1.0).unwrap(), CostMode::EmulatedAltruism).unwrap();
    assert_eq!(ctx.alpha(0, 0), Some(1.0));
    assert_eq!(ctx.perceived_cost(0, 0, &Path(vec![0]), &[0.5, 0.5]), 3.0);
}

#[test]
fn slowdown_costs_may_be_negative() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 2.0).unwrap();
    assert_eq!(ctx.perceived_cost(0, 0, &Path(vec![1]), &[0.0, 1.0]), -1.0);
}

#[test]
fn emulated_mode_rejects_singular_and_mixed_degree() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let err = PerceivedCostContext::new(&p, &prof, Signal::new(1.0).unwrap(), CostMode::EmulatedAltruism)
        .unwrap_err();
    assert!(matches!(err, EquilibriumError::Population(PopulationError::SingularTransform(_))));

    let q = two_links(Latency::new(1.0, 2, 0.0), Latency::constant(1.0), 1.0);
    let prof = SensitivityProfile::homogeneous(&q, 0.5).unwrap();
    let err = PerceivedCostContext::new(&q, &prof, Signal::new(0.5).unwrap(), CostMode::EmulatedAltruism)
        .unwrap_err();
    assert!(matches!(err, EquilibriumError::NonUniformDegree));
}

#[test]
fn potential_examples() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.0).unwrap();
    assert_eq!(potential(&ctx, &single(&[1.0, 0.0])).unwrap(), 0.5);
    assert_eq!(potential(&ctx, &single(&[0.5, 0.5])).unwrap(), 0.625);
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.5).unwrap();
    assert_eq!(potential(&ctx, &single(&[0.5, 0.5])).unwrap(), 0.375);
    assert!(matches!(potential(&ctx, &single(&[0.5, 0.6])), Err(EquilibriumError::Network(_))));
}

#[test]
fn pigou_nash_flows() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let config = SolverConfig::default();

    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.0).unwrap();
    let r = solve_nash(&ctx, &config).unwrap();
    assert_abs_diff_eq!(r.flow.path_flows(0)[0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(r.total_latency, 1.0, epsilon = 1e-9);

    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.5).unwrap();
    let r = solve_nash(&ctx, &config).unwrap();
    assert_abs_diff_eq!(r.flow.path_flows(0)[0], 0.5, epsilon = 1e-8);
    assert_abs_diff_eq!(r.total_latency, 0.75, epsilon = 1e-8);
    assert!(r.converged && r.relative_gap <= config.tolerance);
    assert_abs_diff_eq!(r.total_latency, total_latency(&p, &r.flow).unwrap(), epsilon = 1e-12);
    assert!(r.diagnostics.possibly_non_unique, "edge 2 is constant");
}

#[test]
fn braess_nash_uses_the_zigzag() {
    let p = braess();
    for (beta, gamma) in [(0.0, 0.7), (1.0, 0.0)] {
        let prof = SensitivityProfile::homogeneous(&p, beta).unwrap();
        let ctx = PerceivedCostContext::slowdown(&p, &prof, gamma).unwrap();
        let r = solve_nash(&ctx, &SolverConfig::default()).unwrap();
        // path 0 is s-v-w-t in enumeration order
        assert_abs_diff_eq!(r.flow.path_flows(0)[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.total_latency, 2.0, epsilon = 1e-6);
    }
}

#[test]
fn optimum_examples() {
    let config = SolverConfig::default();
    let r = solve_optimum(&pigou(), &config).unwrap();
    assert_abs_diff_eq!(r.flow.path_flows(0)[0], 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(r.total_latency, 0.75, epsilon = 1e-9);

    let sym = two_links(Latency::linear(1.0, 0.0), Latency::linear(1.0, 0.0), 1.0);
    let r = solve_optimum(&sym, &config).unwrap();
    assert_abs_diff_eq!(r.flow.path_flows(0)[0], 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(r.total_latency, 0.5, epsilon = 1e-9);

    let r = solve_optimum(&braess(), &config).unwrap();
    assert_abs_diff_eq!(r.total_latency, 1.5, epsilon = 1e-8);
    let f = r.flow.path_flows(0);
    assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-4);
    assert_abs_diff_eq!(f[1], 0.5, epsilon = 1e-4);
    assert_abs_diff_eq!(f[2], 0.5, epsilon = 1e-4);
}

#[test]
fn both_step_rules_and_directions_converge_on_pigou() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.5).unwrap();
    for direction in [DirectionRule::Pairwise, DirectionRule::AllOrNothing] {
        let config = SolverConfig { direction, tolerance: 1e-6, ..SolverConfig::default() };
        let r = solve_nash(&ctx, &config).unwrap();
        assert_abs_diff_eq!(r.flow.path_flows(0)[0], 0.5, epsilon = 1e-5);
    }
    let config = SolverConfig { step_rule: StepRule::Harmonic, tolerance: 1e-4, ..SolverConfig::default() };
    let r = solve_nash(&ctx, &config).unwrap();
    assert_abs_diff_eq!(r.flow.path_flows(0)[0], 0.5, epsilon = 1e-2);
}

#[test]
fn iteration_budget_exhaustion_returns_best_iterate() {
    let p = braess();
    let prof = SensitivityProfile::homogeneous(&p, 0.5).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.5).unwrap();
    let config = SolverConfig {
        direction: DirectionRule::AllOrNothing,
        step_rule: StepRule::Harmonic,
        max_iterations: 3,
        tolerance: 1e-14,
        ..SolverConfig::default()
    };
    let err = solve_nash(&ctx, &config).unwrap_err();
    let best = err.unconverged_result().expect("best iterate");
    assert!(!best.converged);
    assert_eq!(best.iterations, 3);
    assert!(ctx.check_flow(&best.flow).is_ok());
}

#[test]
fn verify_nash_examples() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.0).unwrap();
    assert!(verify_nash(&ctx, &single(&[1.0, 0.0]), 1e-6).unwrap().is_empty());

    let report = verify_nash(&ctx, &single(&[0.5, 0.5]), 1e-6).unwrap();
    assert_eq!(report.violations.len(), 1);
    let v = &report.violations[0];
    assert_eq!((v.path, v.cost, v.min_cost), (1, 1.0, 0.5));

    let one_path = RoutingProblem {
        commodities: vec![Commodity { paths: vec![Path(vec![0])], ..p.commodities[0].clone() }],
        ..p.clone()
    };
    let ctx = PerceivedCostContext::slowdown(&one_path, &prof, 0.3).unwrap();
    assert!(verify_nash(&ctx, &single(&[1.0]), 0.0).unwrap().is_empty());
}

#[test]
fn two_link_oracle_examples() {
    let one = [SensitivityClass::new(1.0, 1.0)];
    let f = two_link_oracle(1.0, 0.0, 0.0, 1.0, &one, 0.5).unwrap();
    assert_abs_diff_eq!(f.class_flows[0][0], 0.5, epsilon = 1e-15);
    let f = two_link_oracle(1.0, 0.0, 0.0, 1.0, &one, 0.0).unwrap();
    assert_eq!(f.class_flows[0], [1.0, 0.0]);

    // gamma = 1: the beta = 1 class sees link 2 as free and leaves link 1 to
    // the beta = 0 class, who pay 0.5 < 1 there.
    let two = [SensitivityClass::new(0.0, 0.5), SensitivityClass::new(1.0, 0.5)];
    let f = two_link_oracle(1.0, 0.0, 0.0, 1.0, &two, 1.0).unwrap();
    assert_eq!(f.class_flows, vec![[0.5, 0.0], [0.0, 0.5]]);
}

#[test]
fn two_link_oracle_degenerate_constant_links() {
    let one = [SensitivityClass::new(0.5, 1.0)];
    let err = two_link_oracle(0.0, 1.0, 0.0, 1.0, &one, 0.5).unwrap_err();
    match err {
        EquilibriumError::DegenerateInstance { fallback } => assert_eq!(fallback.class_flows, vec![[1.0, 0.0]]),
        other => panic!("unexpected {other:?}"),
    }
    let f = two_link_oracle(0.0, 2.0, 0.0, 1.0, &one, 0.5).unwrap();
    assert_eq!(f.class_flows, vec![[0.0, 1.0]]);
}

#[test]
fn two_class_pigou_matches_solver() {
    let p = pigou();
    let prof =
        SensitivityProfile::new(vec![vec![SensitivityClass::new(0.0, 0.5), SensitivityClass::new(1.0, 0.5)]])
            .unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 1.0).unwrap();
    let r = solve_nash(&ctx, &SolverConfig::default()).unwrap();
    let oracle = two_link_oracle(1.0, 0.0, 0.0, 1.0, prof.classes(0), 1.0).unwrap();
    let ef = r.flow.edge_flows(&p);
    assert_abs_diff_eq!(ef[0], oracle.edge_flows()[0], epsilon = 1e-6);
    assert_abs_diff_eq!(ef[1], oracle.edge_flows()[1], epsilon = 1e-6);
}

#[test]
fn brute_force_examples() {
    let p = pigou();
    let prof = SensitivityProfile::homogeneous(&p, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&p, &prof, 0.0).unwrap();
    let f = brute_force_oracle(&ctx, 1e-3).unwrap();
    assert!((0.999..=1.0).contains(&f.path_flows(0)[0]));

    let b = braess();
    let prof = SensitivityProfile::homogeneous(&b, 1.0).unwrap();
    let ctx = PerceivedCostContext::slowdown(&b, &prof, 0.0).unwrap();
    let f = brute_force_oracle(&ctx, 1e-2).unwrap();
    assert!(f.path_flows(0)[0] >= 1.0 - 1e-2);
}

#[test]
fn brute_force_refinement_never_worsens() {
    let b = braess();
    let prof =
        SensitivityProfile::new(vec![vec![SensitivityClass::new(0.2, 0.4), SensitivityClass::new(0.9, 0.6)]])
            .unwrap();
    let ctx = PerceivedCostContext::slowdown(&b, &prof, 0.8).unwrap();
    let coarse = potential(&ctx, &brute_force_oracle(&ctx, 0.1).unwrap()).unwrap();
    let fine = potential(&ctx, &brute_force_oracle(&ctx, 0.05).unwrap()).unwrap();
    assert!(fine <= coarse);
}

#[test]
fn brute_force_rejects_large_instances() {
    let b = braess();
    let classes = (0..3).map(|i| SensitivityClass::new(0.3 * i as f64, 1.0 / 3.0)).collect();
    let prof = SensitivityProfile::new(vec![classes]).unwrap();
    let ctx = PerceivedCostContext::slowdown(&b, &prof, 0.5).unwrap();
    assert!(matches!(
        brute_force_oracle(&ctx, 0.1),
        Err(EquilibriumError::DimensionTooLarge { dimension: 9, .. })
    ));
}

#[test]
fn random_start_reaches_same_costs() {
    let b = braess();
    let b = RoutingProblem {
        edges: b
            .edges
            .iter()
            .map(|e| Edge { latency: Latency::linear(e.latency.a + 0.5, e.latency.b), ..*e })
            .collect(),
        ..b
    };
    let prof =
        SensitivityProfile::new(vec![vec![SensitivityClass::new(0.1, 0.3), SensitivityClass::new(0.8, 0.7)]])
            .unwrap();
    let ctx = PerceivedCostContext::slowdown(&b, &prof, 0.6).unwrap();
    let first = solve_nash(&ctx, &SolverConfig::default()).unwrap();
    let config = SolverConfig { initial_flow: InitialFlow::Random, seed: 7, ..SolverConfig::default() };
    let second = solve_nash(&ctx, &config).unwrap();
    for (x, y) in first.per_class_min_cost[0].iter().zip(&second.per_class_min_cost[0]) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-6);
    }
}

fn arb_instance() -> impl Strategy<Value = (RoutingProblem, SensitivityProfile, f64)> {
    (
        prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 5),
        1u32..3,
        0.1f64..2.0,
        prop::collection::vec((0.0f64..=1.0, 0.05f64..1.0), 1..3),
        0.0f64..1.5,
    )
        .prop_map(|(coeffs, degree, rate, classes, gamma)| {
            let mut p = braess();
            for (edge, (a, b)) in p.edges.iter_mut().zip(coeffs) {
                edge.latency = Latency::new(a, degree, b);
            }
            p.commodities[0].rate = rate;
            let total: f64 = classes.iter().map(|c| c.1).sum();
            let classes = classes.into_iter().map(|(beta, m)| SensitivityClass::new(beta, m * rate / total)).collect();
            (p, SensitivityProfile::new(vec![classes]).unwrap(), gamma)
        })
}

fn arb_flow(profile: &SensitivityProfile, weights: &[f64]) -> FlowAssignment {
    let mut w = weights.iter().cycle();
    FlowAssignment::new(vec![profile
        .classes(0)
        .iter()
        .map(|k| {
            let raw: Vec<f64> = (0..3).map(|_| *w.next().unwrap()).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| k.mass * x / total).collect()
        })
        .collect()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_gradient_is_perceived_cost(
        (p, prof, gamma) in arb_instance(),
        weights in prop::collection::vec(0.05f64..1.0, 6),
        class in 0usize..2,
        path in 0usize..3,
    ) {
        let ctx = PerceivedCostContext::slowdown(&p, &prof, gamma).unwrap();
        let flow = arb_flow(&prof, &weights);
        let class = class % prof.classes(0).len();
        let h = 1e-6 * p.total_rate();
        let bump = |s: f64| {
            let mut raw = flow.class_flows().to_vec();
            raw[0][class][path] += s;
            let edge_flows = FlowAssignment::new(raw.clone()).edge_flows(&p);
            ctx.objective().value(&raw, &edge_flows)
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let cost = ctx.perceived_cost(0, class, &p.commodities[0].paths[path], &flow.edge_flows(&p));
        prop_assert!((fd - cost).abs() <= 1e-6 * cost.abs().max(1.0), "fd {} vs cost {}", fd, cost);
    }

    #[test]
    fn potential_is_convex(
        (p, prof, gamma) in arb_instance(),
        w1 in prop::collection::vec(0.01f64..1.0, 6),
        w2 in prop::collection::vec(0.01f64..1.0, 6),
        lambda in 0.01f64..0.99,
    ) {
        let ctx = PerceivedCostContext::slowdown(&p, &prof, gamma).unwrap();
        let (f, g) = (arb_flow(&prof, &w1), arb_flow(&prof, &w2));
        let mix = FlowAssignment::new(
            f.class_flows().iter().zip(g.class_flows()).map(|(fc, gc)| {
                fc.iter().zip(gc).map(|(fk, gk)| {
                    fk.iter().zip(gk).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
                }).collect()
            }).collect(),
        );
        let lhs = potential(&ctx, &mix).unwrap();
        let rhs = lambda * potential(&ctx, &f).unwrap() + (1.0 - lambda) * potential(&ctx, &g).unwrap();
        prop_assert!(lhs <= rhs + 1e-10);
    }

    #[test]
    fn converged_solves_pass_wardrop_check((p, prof, gamma) in arb_instance()) {
        let ctx = PerceivedCostContext::slowdown(&p, &prof, gamma).unwrap();
        let r = solve_nash(&ctx, &SolverConfig::default()).unwrap();
        prop_assert!(r.relative_gap <= 1e-9);
        let report = verify_nash(&ctx, &r.flow, r.wardrop_epsilon()).unwrap();
        prop_assert!(report.is_empty(), "{:?}", report.violations);
    }
}
