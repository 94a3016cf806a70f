//! Closed-form regime boundaries and time bounds.
//!
//! The universal constants of the lower and upper bounds are unknown; they are
//! exposed in [`RegimeParams`] and default to 1, so every boundary here holds
//! only up to constants.

use std::fmt;

use crate::error::{domain, Result};
use crate::model::{ForgetSplit, ProblemSpec};
use crate::scalar::Scalar;
pub use crate::unlearn::trivial_regime_excess as trivial_boundary;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeParams<S> {
    /// Constant of the lower bound.
    pub c_lower: S,
    /// Target ratio of the efficient regime, in `(0, 1)`.
    pub gamma_eff: S,
    /// Constant of the efficient upper bound.
    pub c_upper: S,
}

impl<S: Scalar> RegimeParams<S> {
    pub fn new(c_lower: S, gamma_eff: S, c_upper: S) -> Result<Self> {
        if !(c_lower > S::zero() && c_upper > S::zero()) {
            return domain("regime constants must be positive");
        }
        if !(gamma_eff > S::zero() && gamma_eff < S::one()) {
            return domain(format!("target ratio must lie in (0, 1), got {gamma_eff}"));
        }
        Ok(Self { c_lower, gamma_eff, c_upper })
    }
}

impl<S: Scalar> Default for RegimeParams<S> {
    fn default() -> Self {
        Self { c_lower: S::one(), gamma_eff: S::of(0.5), c_upper: S::one() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegimeLabel {
    Trivial,
    Efficient,
    Inefficient,
    Unclassified,
    LearningTrivial,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Trivial => "Trivial",
            Self::Efficient => "Efficient",
            Self::Inefficient => "Inefficient",
            Self::Unclassified => "Unclassified",
            Self::LearningTrivial => "LearningTrivial",
        };
        f.write_str(s)
    }
}

/// `min{1, c rf_odds^2 (1 + kdp^2)} e0`: below it unlearning costs a constant
/// fraction of retraining.
pub fn inefficient_boundary<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>, kdp: S, params: &RegimeParams<S>) -> S {
    let q2 = split.rf_odds * split.rf_odds;
    S::one().min(params.c_lower * q2 * (S::one() + kdp * kdp)) * spec.e0
}

/// `(c / gamma) rf_odds^2 (1 + d kdp^2) e0`: above it the ratio is at most `gamma`.
pub fn efficient_threshold<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>, kdp: S, params: &RegimeParams<S>) -> S {
    let q2 = split.rf_odds * split.rf_odds;
    params.c_upper / params.gamma_eff * q2 * (S::one() + S::of_usize(spec.dim) * kdp * kdp) * spec.e0
}

pub fn classify<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>, e: S, kdp: S, params: &RegimeParams<S>) -> RegimeLabel {
    if e >= spec.e0 {
        RegimeLabel::LearningTrivial
    } else if e >= trivial_boundary(spec, split, kdp) {
        RegimeLabel::Trivial
    } else if e < inefficient_boundary(spec, split, kdp, params) {
        RegimeLabel::Inefficient
    } else if e >= efficient_threshold(spec, split, kdp, params) {
        RegimeLabel::Efficient
    } else {
        RegimeLabel::Unclassified
    }
}

/// `2 L^2 / (mu e)`, or 0 once `e >= e0`.
pub fn scratch_time_upper<S: Scalar>(spec: &ProblemSpec<S>, e: S) -> S {
    if e >= spec.e0 {
        return S::zero();
    }
    S::of(2.0) * spec.lipschitz * spec.lipschitz / (spec.mu * e)
}

/// `rf_odds^2 (1 + d kdp^2) (e0 / e)^2`, or 0 once `e >= e0`.
pub fn unlearn_time_upper<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>, kdp: S, e: S) -> S {
    if e >= spec.e0 {
        return S::zero();
    }
    let r = spec.e0 / e;
    split.rf_odds * split.rf_odds * (S::one() + S::of_usize(spec.dim) * kdp * kdp) * r * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_problem;
    use proptest::prelude::*;

    fn setup(rf: f64, d: usize) -> (ProblemSpec<f64>, ForgetSplit<f64>) {
        (make_problem(1.0, 25.0, d).unwrap(), ForgetSplit::new(rf).unwrap())
    }

    #[test]
    fn boundary_examples() {
        let (spec, split) = setup(0.01, 2);
        let p = RegimeParams::default();
        assert!((trivial_boundary(&spec, &split, 1.0) - 1.1240).abs() < 1e-4);
        assert!((trivial_boundary(&spec, &split, 0.0) - split.rf_odds.powi(2) * spec.e0).abs() < 1e-15);
        assert!((inefficient_boundary(&spec, &split, 10.0, &p) - 0.8051).abs() < 1e-4);
        assert!((efficient_threshold(&spec, &split, 1.0, &p) - 0.04783).abs() < 1e-5);

        let (spec0, split0) = setup(0.0, 2);
        assert_eq!(trivial_boundary(&spec0, &split0, 3.0), 0.0);
        assert_eq!(inefficient_boundary(&spec0, &split0, 3.0, &p), 0.0);
        assert_eq!(efficient_threshold(&spec0, &split0, 3.0, &p), 0.0);

        let (spec_h, split_h) = setup(0.5, 2);
        assert_eq!(inefficient_boundary(&spec_h, &split_h, 0.0, &p), spec_h.e0);

        let big = efficient_threshold(&spec, &split, 200.0, &p) / efficient_threshold(&spec, &split, 100.0, &p);
        assert!((big - 4.0).abs() < 1e-3);
    }

    #[test]
    fn classify_examples() {
        let (spec, split) = setup(0.01, 2);
        let p = RegimeParams::default();
        assert_eq!(classify(&spec, &split, spec.e0, 1.0, &p), RegimeLabel::LearningTrivial);
        assert_eq!(classify(&spec, &split, 10.0, 1.0, &p), RegimeLabel::Trivial);
        assert_eq!(classify(&spec, &split, 1e-6 * spec.e0, 1.0, &p), RegimeLabel::Inefficient);
        // between the efficient threshold and the trivial boundary
        assert_eq!(classify(&spec, &split, 0.5, 1.0, &p), RegimeLabel::Efficient);
    }

    #[test]
    fn time_bounds() {
        let (spec, split) = setup(0.01, 2);
        assert_eq!(scratch_time_upper(&spec, 1.0), 1250.0);
        assert_eq!(scratch_time_upper(&spec, spec.e0), 0.0);
        assert_eq!(unlearn_time_upper(&spec, &split, 1.0, spec.e0), 0.0);
        let u = unlearn_time_upper(&spec, &split, 1.0, spec.e0 / 10.0);
        assert!((u - 0.0306).abs() < 1e-4, "{u}");
    }

    #[test]
    fn params_validation() {
        assert!(RegimeParams::new(0.0, 0.5, 1.0).is_err());
        assert!(RegimeParams::new(1.0, 1.0, 1.0).is_err());
        assert!(RegimeParams::new(1.0, 0.5, -1.0).is_err());
        assert!(RegimeParams::new(2.0, 0.1, 3.0).is_ok());
    }

    proptest! {
        #[test]
        fn inefficient_never_exceeds_e0(rf in 0.0f64..0.99, kdp in 0.0f64..1e3, c in 1e-3f64..1e3) {
            let (spec, split) = setup(rf, 3);
            let p = RegimeParams::new(c, 0.5, 1.0).unwrap();
            prop_assert!(inefficient_boundary(&spec, &split, kdp, &p) <= spec.e0);
        }

        #[test]
        fn trivial_below_e0_iff(rf in 0.0f64..0.99, kdp in 0.0f64..100.0, d in 1usize..10) {
            let (spec, split) = setup(rf, d);
            let q = split.rf_odds;
            let lhs = trivial_boundary(&spec, &split, kdp) < spec.e0;
            let rhs = q * (q + (d as f64).sqrt() * kdp) < 1.0;
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn trivial_is_affine_in_kdp(rf in 0.0f64..0.9, k1 in 0.0f64..50.0, k2 in 0.0f64..50.0, d in 1usize..10) {
            let (spec, split) = setup(rf, d);
            let slope = split.rf_odds * (d as f64).sqrt() * spec.e0;
            let diff = trivial_boundary(&spec, &split, k2) - trivial_boundary(&spec, &split, k1);
            prop_assert!((diff - slope * (k2 - k1)).abs() <= 1e-9 * (1.0 + slope * 100.0));
        }

        #[test]
        fn classify_is_total(rf in 0.0f64..0.99, kdp in 0.0f64..100.0, le in -8.0f64..4.0) {
            let (spec, split) = setup(rf, 2);
            let e = 10f64.powf(le);
            let p = RegimeParams::default();
            let label = classify(&spec, &split, e, kdp, &p);
            // the label agrees with the defining comparisons
            match label {
                RegimeLabel::LearningTrivial => prop_assert!(e >= spec.e0),
                RegimeLabel::Trivial => prop_assert!(e < spec.e0 && e >= trivial_boundary(&spec, &split, kdp)),
                RegimeLabel::Inefficient => prop_assert!(e < inefficient_boundary(&spec, &split, kdp, &p)),
                RegimeLabel::Efficient => prop_assert!(e >= efficient_threshold(&spec, &split, kdp, &p)),
                RegimeLabel::Unclassified => prop_assert!(e < efficient_threshold(&spec, &split, kdp, &p)),
            }
        }

        #[test]
        fn boundaries_vanish_without_forgetting(kdp in 0.0f64..100.0) {
            let (spec, split) = setup(0.0, 2);
            let p = RegimeParams::default();
            prop_assert_eq!(trivial_boundary(&spec, &split, kdp), 0.0);
            prop_assert_eq!(inefficient_boundary(&spec, &split, kdp, &p), 0.0);
            prop_assert_eq!(efficient_threshold(&spec, &split, kdp, &p), 0.0);
        }
    }
}
