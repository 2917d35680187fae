//! Slowdown-sensitivity distributions and the sensitivity/altruism transforms.
//!
//! A commodity's population is a finite list of classes, each a block of
//! traffic sharing one slowdown sensitivity `beta` in `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RoutingProblem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error("beta out of [0,1]: {0}")]
    BetaOutOfRange(f64),
    #[error("class mass must be positive and finite, got {0}")]
    InvalidMass(f64),
    #[error("commodity {commodity} has no sensitivity classes")]
    EmptyCommodity { commodity: usize },
    #[error("profile describes {profile} commodities, problem has {problem}")]
    CommodityCount { profile: usize, problem: usize },
    #[error("commodity {commodity}: class masses sum to {total}, rate is {rate}")]
    MassMismatch { commodity: usize, total: f64, rate: f64 },
    #[error("gamma must be finite and nonnegative, got {0}")]
    InvalidGamma(f64),
    #[error("gamma * beta = {0} >= 1: sensitivity transform is singular")]
    SingularTransform(f64),
    #[error("degree must be at least 1")]
    ZeroDegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityClass {
    pub beta: f64,
    pub mass: f64,
}

impl SensitivityClass {
    pub fn new(beta: f64, mass: f64) -> Self {
        Self { beta, mass }
    }

    fn check(&self) -> Result<(), PopulationError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(PopulationError::BetaOutOfRange(self.beta));
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(PopulationError::InvalidMass(self.mass));
        }
        Ok(())
    }
}

/// Per-commodity class lists, each sorted by nondecreasing `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    commodities: Vec<Vec<SensitivityClass>>,
}

impl SensitivityProfile {
    pub fn new(mut commodities: Vec<Vec<SensitivityClass>>) -> Result<Self, PopulationError> {
        for (c, classes) in commodities.iter_mut().enumerate() {
            if classes.is_empty() {
                return Err(PopulationError::EmptyCommodity { commodity: c });
            }
            for class in classes.iter() {
                class.check()?;
            }
            classes.sort_by(|x, y| x.beta.total_cmp(&y.beta));
        }
        Ok(Self { commodities })
    }

    /// Every commodity's whole rate in a single class with sensitivity `beta`.
    pub fn homogeneous(problem: &RoutingProblem, beta: f64) -> Result<Self, PopulationError> {
        Self::new(
            problem
                .commodities
                .iter()
                .map(|c| vec![SensitivityClass::new(beta, c.rate)])
                .collect(),
        )
    }

    pub fn commodities(&self) -> &[Vec<SensitivityClass>] {
        &self.commodities
    }

    pub fn classes(&self, commodity: usize) -> &[SensitivityClass] {
        &self.commodities[commodity]
    }

    pub fn class_count(&self) -> usize {
        self.commodities.iter().map(Vec::len).sum()
    }

    pub fn bounds(&self) -> (f64, f64) {
        profile_bounds(self)
    }

    /// Class masses must add up to each commodity's rate.
    pub fn check_against(&self, problem: &RoutingProblem) -> Result<(), PopulationError> {
        if self.commodities.len() != problem.commodities.len() {
            return Err(PopulationError::CommodityCount {
                profile: self.commodities.len(),
                problem: problem.commodities.len(),
            });
        }
        for (c, (classes, commodity)) in self.commodities.iter().zip(&problem.commodities).enumerate() {
            let total: f64 = classes.iter().map(|k| k.mass).sum();
            if (total - commodity.rate).abs() > 1e-9 * commodity.rate {
                return Err(PopulationError::MassMismatch { commodity: c, total, rate: commodity.rate });
            }
        }
        Ok(())
    }
}

/// Smallest and largest class sensitivity over all commodities.
pub fn profile_bounds(profile: &SensitivityProfile) -> (f64, f64) {
    profile
        .commodities
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| (lo.min(k.beta), hi.max(k.beta)))
}

/// Broadcast slowdown signal. `gamma = 1` reports slowdowns truthfully;
/// `gamma > 1` over-states them.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signal {
    gamma: f64,
}

impl Signal {
    pub const NONE: Signal = Signal { gamma: 0.0 };

    pub fn new(gamma: f64) -> Result<Self, PopulationError> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(PopulationError::InvalidGamma(gamma));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(self) -> f64 {
        self.gamma
    }

    pub fn is_model_faithful(self) -> bool {
        self.gamma <= 1.0
    }

    pub fn is_over_statement(self) -> bool {
        self.gamma > 1.0
    }
}

/// Altruism level `alpha = gamma*beta / (d (1 - gamma*beta))` whose
/// marginal-cost-style edge costs induce the same Nash flows as the
/// slowdown-sensitive costs.
pub fn beta_to_alpha(beta: f64, gamma: f64, degree: u32) -> Result<f64, PopulationError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(PopulationError::BetaOutOfRange(beta));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(PopulationError::InvalidGamma(gamma));
    }
    if degree == 0 {
        return Err(PopulationError::ZeroDegree);
    }
    let gb = gamma * beta;
    if gb >= 1.0 {
        return Err(PopulationError::SingularTransform(gb));
    }
    Ok(gb / (f64::from(degree) * (1.0 - gb)))
}

/// Inverse of [`beta_to_alpha`] at `gamma = 1`: `beta = alpha d / (alpha d + 1)`.
///
/// `alpha` must be nonnegative.
pub fn alpha_to_beta(alpha: f64, degree: u32) -> f64 {
    assert!(alpha >= 0.0, "alpha must be nonnegative, got {alpha}");
    let ad = alpha * f64::from(degree);
    ad / (ad + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn beta_to_alpha_examples() {
        assert_eq!(beta_to_alpha(0.0, 0.7, 1).unwrap(), 0.0);
        assert_eq!(beta_to_alpha(0.5, 1.0, 1).unwrap(), 1.0);
        assert_relative_eq!(beta_to_alpha(2.0 / 3.0, 1.0, 2).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn singular_transform_is_rejected() {
        assert!(matches!(beta_to_alpha(1.0, 1.0, 1), Err(PopulationError::SingularTransform(_))));
        assert!(matches!(beta_to_alpha(0.8, 1.5, 2), Err(PopulationError::SingularTransform(_))));
        // over-statement is fine as long as gamma*beta stays below 1
        assert!(beta_to_alpha(0.5, 1.5, 1).is_ok());
    }

    #[test]
    fn alpha_to_beta_examples() {
        assert_eq!(alpha_to_beta(0.0, 3), 0.0);
        assert_eq!(alpha_to_beta(1.0, 1), 0.5);
        assert_relative_eq!(alpha_to_beta(1.0, 2), 2.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn bounds_examples() {
        let one = SensitivityProfile::new(vec![vec![SensitivityClass::new(0.4, 1.0)]]).unwrap();
        assert_eq!(profile_bounds(&one), (0.4, 0.4));
        let two = SensitivityProfile::new(vec![vec![
            SensitivityClass::new(0.75, 0.5),
            SensitivityClass::new(0.25, 0.5),
        ]])
        .unwrap();
        assert_eq!(two.bounds(), (0.25, 0.75));
        assert_eq!(two.classes(0)[0].beta, 0.25, "classes are sorted by beta");
        let three = SensitivityProfile::new(vec![
            vec![SensitivityClass::new(0.5, 1.0), SensitivityClass::new(0.1, 1.0)],
            vec![SensitivityClass::new(0.9, 2.0)],
        ])
        .unwrap();
        assert_eq!(three.bounds(), (0.1, 0.9));
    }

    #[test]
    fn invalid_classes_are_rejected() {
        let err = SensitivityProfile::new(vec![vec![SensitivityClass::new(1.3, 1.0)]]).unwrap_err();
        assert!(err.to_string().contains("beta out of [0,1]"));
        assert!(SensitivityProfile::new(vec![vec![SensitivityClass::new(0.3, 0.0)]]).is_err());
        assert!(SensitivityProfile::new(vec![vec![]]).is_err());
    }

    #[test]
    fn signal_flags() {
        assert!(Signal::new(-0.1).is_err());
        assert!(Signal::new(f64::NAN).is_err());
        let truthful = Signal::new(1.0).unwrap();
        assert!(truthful.is_model_faithful() && !truthful.is_over_statement());
        assert!(Signal::new(4.0 / 3.0).unwrap().is_over_statement());
    }

    proptest! {
        #[test]
        fn alpha_round_trip(alpha in 0.0f64..10.0, degree in 1u32..5) {
            let back = beta_to_alpha(alpha_to_beta(alpha, degree), 1.0, degree).unwrap();
            prop_assert!((back - alpha).abs() <= 1e-12 * alpha.max(f64::MIN_POSITIVE) || back == alpha);
        }

        #[test]
        fn alpha_increases_with_beta(b1 in 0.0f64..1.0, b2 in 0.0f64..1.0, gamma in 0.01f64..0.99, degree in 1u32..4) {
            prop_assume!(b1 < b2);
            let a1 = beta_to_alpha(b1, gamma, degree).unwrap();
            let a2 = beta_to_alpha(b2, gamma, degree).unwrap();
            prop_assert!(a1 < a2);
        }

        #[test]
        fn alpha_to_beta_is_increasing_into_unit_interval(x in 0.0f64..1e6, y in 0.0f64..1e6, degree in 1u32..4) {
            prop_assume!(x < y);
            let (bx, by) = (alpha_to_beta(x, degree), alpha_to_beta(y, degree));
            prop_assert!((0.0..1.0).contains(&bx) && (0.0..1.0).contains(&by));
            prop_assert!(bx < by);
        }
    }
}
