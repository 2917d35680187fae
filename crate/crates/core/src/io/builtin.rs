//! Canonical instances and parametric network constructors.

use thiserror::Error;

use crate::network::{enumerate_paths, Commodity, Edge, Latency, NetworkError, Path, RoutingProblem};
use crate::population::{PopulationError, SensitivityClass, SensitivityProfile};

pub const BUILTIN_NAMES: [&str; 5] = ["pigou", "pigou-d", "braess", "two-class-two-link", "k-link-uniform"];

#[derive(Debug, Error)]
pub enum BuiltinError {
    #[error("unknown instance {0:?} (known: pigou, pigou-d, braess, two-class-two-link, k-link-uniform)")]
    UnknownInstance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Optional knobs for the parameterized builtins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuiltinParams {
    /// Latency degree for `pigou-d` (default 2) and `k-link-uniform` (default 1).
    pub degree: Option<u32>,
    /// Number of links for `k-link-uniform` (default 3).
    pub links: Option<usize>,
    /// Class sensitivities, split evenly over the rate. Defaults: `[1]` for
    /// single-class instances and `[0, 1]` for `two-class-two-link`.
    pub betas: Option<Vec<f64>>,
}

/// A routing problem with its population.
pub type Instance = (RoutingProblem, SensitivityProfile);

pub fn builtin_instance(name: &str) -> Result<Instance, BuiltinError> {
    builtin_instance_with(name, &BuiltinParams::default())
}

pub fn builtin_instance_with(name: &str, params: &BuiltinParams) -> Result<Instance, BuiltinError> {
    let degree = params.degree.unwrap_or(match name {
        "pigou-d" => 2,
        _ => 1,
    });
    if degree == 0 {
        return Err(BuiltinError::InvalidParameter("degree must be at least 1".into()));
    }
    let default_betas = match name {
        "two-class-two-link" => vec![0.0, 1.0],
        _ => vec![1.0],
    };
    let betas = params.betas.clone().unwrap_or(default_betas);
    if betas.is_empty() {
        return Err(BuiltinError::InvalidParameter("at least one beta is required".into()));
    }

    let mut problem = match name {
        "pigou" => parallel_links("pigou", &[Latency::linear(1.0, 0.0), Latency::constant(1.0)], 1.0),
        "pigou-d" => parallel_links("pigou-d", &[Latency::new(1.0, degree, 0.0), Latency::constant(1.0)], 1.0),
        "two-class-two-link" => {
            parallel_links("two-class-two-link", &[Latency::linear(1.0, 0.0), Latency::constant(1.0)], 1.0)
        }
        "braess" => braess_network(
            [
                Latency::linear(1.0, 0.0),
                Latency::constant(1.0),
                Latency::constant(0.0),
                Latency::constant(1.0),
                Latency::linear(1.0, 0.0),
            ],
            1.0,
            None,
        )?,
        "k-link-uniform" => {
            let k = params.links.unwrap_or(3);
            if k < 2 {
                return Err(BuiltinError::InvalidParameter("k-link-uniform needs at least 2 links".into()));
            }
            let latencies: Vec<Latency> =
                (0..k).map(|i| Latency::new(1.0, degree, i as f64 / k as f64)).collect();
            parallel_links("k-link-uniform", &latencies, 1.0)
        }
        other => return Err(BuiltinError::UnknownInstance(other.to_string())),
    };
    problem.name = name.to_string();
    let profile = even_split_profile(&problem, &betas)?;
    Ok((problem, profile))
}

/// Every commodity's rate split evenly over classes with the given sensitivities.
pub fn even_split_profile(problem: &RoutingProblem, betas: &[f64]) -> Result<SensitivityProfile, PopulationError> {
    SensitivityProfile::new(
        problem
            .commodities
            .iter()
            .map(|c| betas.iter().map(|&b| SensitivityClass::new(b, c.rate / betas.len() as f64)).collect())
            .collect(),
    )
}

/// One `s -> t` commodity over parallel single-edge links.
pub fn parallel_links(name: &str, latencies: &[Latency], rate: f64) -> RoutingProblem {
    RoutingProblem {
        name: name.to_string(),
        nodes: vec!["s".into(), "t".into()],
        edges: latencies.iter().map(|&l| Edge::new(0, 1, l)).collect(),
        commodities: vec![Commodity {
            source: 0,
            sink: 1,
            rate,
            paths: (0..latencies.len()).map(|i| Path(vec![i])).collect(),
        }],
    }
}

/// The Braess graph `s->v, s->w, v->w, v->t, w->t` with an `s -> t` commodity
/// and, optionally, `v -> t` cross traffic of the given rate.
pub fn braess_network(
    latencies: [Latency; 5],
    rate: f64,
    cross_rate: Option<f64>,
) -> Result<RoutingProblem, NetworkError> {
    let (s, v, w, t) = (0, 1, 2, 3);
    let edges: Vec<Edge> = [(s, v), (s, w), (v, w), (v, t), (w, t)]
        .iter()
        .zip(latencies)
        .map(|(&(tail, head), l)| Edge::new(tail, head, l))
        .collect();
    let mut commodities =
        vec![Commodity { source: s, sink: t, rate, paths: enumerate_paths(4, &edges, s, t, 64)? }];
    if let Some(cross) = cross_rate {
        commodities.push(Commodity { source: v, sink: t, rate: cross, paths: enumerate_paths(4, &edges, v, t, 64)? });
    }
    Ok(RoutingProblem {
        name: "braess".into(),
        nodes: ["s", "v", "w", "t"].map(String::from).to_vec(),
        edges,
        commodities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{classify, NetworkClass};

    #[test]
    fn builtins_are_valid() {
        for name in BUILTIN_NAMES {
            let (p, prof) = builtin_instance(name).unwrap();
            assert!(p.validate().is_empty(), "{name}");
            prof.check_against(&p).unwrap();
        }
    }

    #[test]
    fn builtin_shapes() {
        let (p, prof) = builtin_instance("pigou").unwrap();
        assert_eq!(p.edges.len(), 2);
        assert_eq!(classify(&p), NetworkClass::Parallel);
        assert_eq!(prof.bounds(), (1.0, 1.0));
        let (b, _) = builtin_instance("braess").unwrap();
        assert_eq!(classify(&b), NetworkClass::Symmetric);
        assert_eq!(b.commodities[0].paths.len(), 3);
        let (two, prof) = builtin_instance("two-class-two-link").unwrap();
        assert_eq!(two.edges.len(), 2);
        assert_eq!(prof.classes(0).len(), 2);
        let params = BuiltinParams { links: Some(5), degree: Some(2), betas: Some(vec![0.3]) };
        let (k, prof) = builtin_instance_with("k-link-uniform", &params).unwrap();
        assert_eq!(k.edges.len(), 5);
        assert_eq!(k.uniform_degree(), Some(2));
        assert_eq!(prof.bounds(), (0.3, 0.3));
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin_instance("nosuch"), Err(BuiltinError::UnknownInstance(_))));
    }

    #[test]
    fn cross_traffic_adds_a_commodity() {
        let l = Latency::linear(1.0, 1.0);
        let p = braess_network([l; 5], 1.0, Some(0.5)).unwrap();
        assert_eq!(p.commodities.len(), 2);
        assert_eq!(p.commodities[1].paths, vec![Path(vec![2, 4]), Path(vec![3])]);
        assert_eq!(classify(&p), NetworkClass::General);
    }
}
