//! Gaussian-mechanism unlearners: noise only, and noise followed by fine-tuning.

use std::ops::ControlFlow;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result};
use crate::losses::LossOracle;
use crate::model::{ForgetSplit, ParamVector, PrivacyBudget, ProblemSpec};
use crate::optim::{run_iterative, tuned_constant_step, IterState, UpdateRule};
use crate::scalar::Scalar;

/// Where the sensitivity `Delta = |theta* - theta_r*|` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SensitivityMode {
    /// The worst-case bound `rf_odds L / mu`.
    Theoretical,
    /// The actual distance between the stored optima.
    #[default]
    Measured,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sensitivity<S> {
    pub mode: SensitivityMode,
    pub value: S,
}

impl<S: Scalar> Sensitivity<S> {
    pub fn theoretical(spec: &ProblemSpec<S>, split: &ForgetSplit<S>) -> Self {
        Self { mode: SensitivityMode::Theoretical, value: r1(spec, split) }
    }

    pub fn measured(full_opt: &ParamVector<S>, retain_opt: &ParamVector<S>) -> Result<Self> {
        retain_opt.check_dim(full_opt.dim())?;
        Ok(Self { mode: SensitivityMode::Measured, value: full_opt.distance(retain_opt) })
    }

    /// Sensitivity of `loss` in the requested mode. Measured mode falls back to
    /// the bound when an optimum is missing (empty vector).
    pub fn of_loss<L: LossOracle<S> + ?Sized>(mode: SensitivityMode, loss: &L) -> Self {
        match mode {
            SensitivityMode::Theoretical => Self::theoretical(loss.problem(), loss.split()),
            SensitivityMode::Measured => match Self::measured(loss.full_optimum(), loss.retain_optimum()) {
                Ok(s) if loss.full_optimum().dim() > 0 => s,
                _ => {
                    warn!("optima unavailable for measured sensitivity; using the theoretical bound");
                    Self::theoretical(loss.problem(), loss.split())
                }
            },
        }
    }

    pub fn custom(mode: SensitivityMode, value: S) -> Result<Self> {
        if !(value >= S::zero() && value.is_finite()) {
            return domain(format!("sensitivity must be nonnegative and finite, got {value}"));
        }
        Ok(Self { mode, value })
    }
}

/// `R1 = rf_odds L / mu`, the worst-case distance between full and retain optima.
pub fn r1<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>) -> S {
    split.rf_odds * spec.lipschitz / spec.mu
}

/// Fine-tune step schedule. `TunedConstant` picks the constant step that
/// minimizes the fine-tune bound for the run's horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FinetuneSchedule<S> {
    Rule(UpdateRule<S>),
    TunedConstant,
}

impl<S: Scalar> FinetuneSchedule<S> {
    pub fn resolve(&self, spec: &ProblemSpec<S>, split: &ForgetSplit<S>, kdp: S, horizon: usize) -> Result<UpdateRule<S>> {
        match *self {
            Self::Rule(r) => Ok(r),
            Self::TunedConstant => Ok(UpdateRule::ConstantStep(tuned_constant_step(
                spec,
                r1(spec, split),
                kdp,
                horizon.max(1),
            )?)),
        }
    }
}

/// A fully specified unlearning run. `kdp` is stored directly so that `kdp = 0`
/// (no privacy requirement) is expressible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnlearnPlan<S> {
    pub budget: Option<PrivacyBudget<S>>,
    pub kdp: S,
    pub sensitivity: Sensitivity<S>,
    /// `kdp * sensitivity.value`.
    pub noise_sigma: S,
    pub finetune_steps: usize,
    pub rule: UpdateRule<S>,
}

impl<S: Scalar> UnlearnPlan<S> {
    pub fn new(budget: PrivacyBudget<S>, sensitivity: Sensitivity<S>, finetune_steps: usize, rule: UpdateRule<S>) -> Result<Self> {
        if !budget.in_lower_bound_range() {
            warn!(
                "delta = {} outside [1e-8, epsilon = {}]; the lower bound does not cover this budget",
                budget.delta, budget.epsilon
            );
        }
        let mut plan = Self::with_kdp(budget.kdp, sensitivity, finetune_steps, rule)?;
        plan.budget = Some(budget);
        Ok(plan)
    }

    pub fn with_kdp(kdp: S, sensitivity: Sensitivity<S>, finetune_steps: usize, rule: UpdateRule<S>) -> Result<Self> {
        if !(kdp >= S::zero() && kdp.is_finite()) {
            return domain(format!("kdp must be nonnegative and finite, got {kdp}"));
        }
        Sensitivity::custom(sensitivity.mode, sensitivity.value)?;
        rule.validate()?;
        Ok(Self {
            budget: None,
            kdp,
            sensitivity,
            noise_sigma: kdp * sensitivity.value,
            finetune_steps,
            rule,
        })
    }
}

/// Per-coordinate noise level `sigma = kdp * Delta`.
pub fn calibrate_noise<S: Scalar>(budget: &PrivacyBudget<S>, sens: &Sensitivity<S>) -> S {
    budget.kdp * sens.value
}

/// `theta* + N(0, sigma^2 I)`. No randomness is consumed when `sigma = 0`.
pub fn noise_only_unlearn<S: Scalar, R: Rng + ?Sized>(
    theta_star: &ParamVector<S>,
    plan: &UnlearnPlan<S>,
    rng: &mut R,
) -> Result<ParamVector<S>> {
    let sigma = plan.noise_sigma;
    if sigma == S::zero() {
        return Ok(theta_star.clone());
    }
    let noisy = theta_star
        .iter()
        .map(|&t| t + sigma * S::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    ParamVector::new(noisy)
}

/// Noise then `plan.finetune_steps` steps of SGD on retain samples.
pub fn noise_and_finetune<S, L, R, F>(
    theta_star: &ParamVector<S>,
    loss: &L,
    plan: &UnlearnPlan<S>,
    rng: &mut R,
    observer: F,
) -> Result<IterState<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&IterState<S>) -> ControlFlow<()>,
{
    let theta0 = noise_only_unlearn(theta_star, plan, rng)?;
    run_iterative(&plan.rule, theta0, loss, plan.finetune_steps, rng, observer)
}

/// Excess risk above which noise alone certifies unlearning:
/// `rf_odds (rf_odds + sqrt(d) kdp) e0`.
pub fn trivial_regime_excess<S: Scalar>(spec: &ProblemSpec<S>, split: &ForgetSplit<S>, kdp: S) -> S {
    let q = split.rf_odds;
    q * (q + S::of_usize(spec.dim).sqrt() * kdp) * spec.e0
}

/// Expected retain excess of the noise-only output on the quadratic loss,
/// `(mu/2)(d sigma^2 + Delta^2)`.
pub fn quadratic_noise_only_excess<S: Scalar>(spec: &ProblemSpec<S>, sigma: S, distance: S) -> S {
    spec.mu / S::of(2.0) * (S::of_usize(spec.dim) * sigma * sigma + distance * distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SyntheticQuadraticLoss;
    use crate::model::make_problem;
    use crate::optim::averaged_iterate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn go(_: &IterState<f64>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    #[test]
    fn calibration_examples() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let split = ForgetSplit::new(0.01).unwrap();
        let sens = Sensitivity::theoretical(&spec, &split);
        assert!((sens.value - 0.252525).abs() < 1e-6);
        let b = PrivacyBudget { epsilon: 1.0, delta: 0.1, kdp: 2.0 };
        assert!((calibrate_noise(&b, &sens) - 0.50505).abs() < 1e-5);
        let b1 = PrivacyBudget { epsilon: 1.0, delta: 0.1, kdp: 1.0 };
        let m = Sensitivity::custom(SensitivityMode::Measured, 0.1).unwrap();
        assert_eq!(calibrate_noise(&b1, &m), 0.1);
        let z = Sensitivity::custom(SensitivityMode::Measured, 0.0).unwrap();
        assert_eq!(calibrate_noise(&b, &z), 0.0);
        let plan = UnlearnPlan::new(b, sens, 0, UpdateRule::DecayingAvgFinetune).unwrap();
        assert_eq!(plan.noise_sigma, b.kdp * sens.value);
    }

    #[test]
    fn trivial_threshold_examples() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let v = trivial_regime_excess(&spec, &ForgetSplit::new(0.01).unwrap(), 1.0);
        assert!((v - 1.1240).abs() < 1e-4, "{v}");
        assert_eq!(trivial_regime_excess(&spec, &ForgetSplit::new(0.0).unwrap(), 0.0), 0.0);
        let spec1 = make_problem(1.0f64, 8f64.sqrt(), 1).unwrap();
        let v = trivial_regime_excess(&spec1, &ForgetSplit::new(0.5).unwrap(), 0.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_is_identity() {
        let th = ParamVector::new(vec![1.0f64, 2.0]).unwrap();
        let plan = UnlearnPlan::with_kdp(3.0, Sensitivity::custom(SensitivityMode::Measured, 0.0).unwrap(), 0, UpdateRule::DecayingAvgFinetune)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(noise_only_unlearn(&th, &plan, &mut rng).unwrap(), th);
    }

    #[test]
    fn noise_moments() {
        let th = ParamVector::new(vec![1.0f64, -3.0]).unwrap();
        let sigma = 0.7;
        let plan = UnlearnPlan::with_kdp(1.0, Sensitivity::custom(SensitivityMode::Measured, sigma).unwrap(), 0, UpdateRule::DecayingAvgFinetune)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<ParamVector<f64>> = (0..n).map(|_| noise_only_unlearn(&th, &plan, &mut rng).unwrap()).collect();
        for j in 0..2 {
            let m = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            assert!((m - th[j]).abs() <= 5.0 * sigma / (n as f64).sqrt());
            let v = draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((v / (sigma * sigma) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn zero_steps_matches_noise_only() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let loss = SyntheticQuadraticLoss::hard_instance(spec, 0.5, 0.1).unwrap();
        let sens = Sensitivity::of_loss(SensitivityMode::Measured, &loss);
        let plan = UnlearnPlan::with_kdp(2.0, sens, 0, UpdateRule::DecayingAvgFinetune).unwrap();
        let a = noise_only_unlearn(loss.full_optimum(), &plan, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let st = noise_and_finetune(loss.full_optimum(), &loss, &plan, &mut ChaCha8Rng::seed_from_u64(3), go).unwrap();
        assert_eq!(averaged_iterate(&st), a);
    }

    #[test]
    fn zero_noise_finetune_equals_plain_run() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let loss = SyntheticQuadraticLoss::hard_instance(spec, 0.5, 0.1).unwrap();
        let sens = Sensitivity::custom(SensitivityMode::Measured, 0.0).unwrap();
        let plan = UnlearnPlan::with_kdp(1.0, sens, 300, UpdateRule::DecayingAvgFinetune).unwrap();
        let a = noise_and_finetune(loss.full_optimum(), &loss, &plan, &mut ChaCha8Rng::seed_from_u64(9), go).unwrap();
        let b = run_iterative(&plan.rule, loss.full_optimum().clone(), &loss, 300, &mut ChaCha8Rng::seed_from_u64(9), go)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_only_excess_matches_closed_form() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let loss = SyntheticQuadraticLoss::hard_instance(spec, 0.5, 0.1).unwrap();
        let sens = Sensitivity::of_loss(SensitivityMode::Measured, &loss);
        let plan = UnlearnPlan::with_kdp(2.0, sens, 0, UpdateRule::DecayingAvgFinetune).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| loss.retain_excess(&noise_only_unlearn(loss.full_optimum(), &plan, &mut rng).unwrap()))
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        let exact = quadratic_noise_only_excess(&spec, plan.noise_sigma, sens.value);
        assert!((m - exact).abs() <= 4.0 * se, "{m} vs {exact}");
    }

    #[test]
    fn finetune_from_retain_optimum_stays_near_it() {
        let spec = make_problem(1.0f64, 25.0, 1).unwrap();
        let loss = SyntheticQuadraticLoss::hard_instance(spec, 0.8, 0.0).unwrap();
        let sens = Sensitivity::of_loss(SensitivityMode::Measured, &loss);
        assert_eq!(sens.value, 0.0);
        let t = 1000;
        let plan = UnlearnPlan::with_kdp(1.0, sens, t, UpdateRule::DecayingAvgFinetune).unwrap();
        let bound = 2.0 * 625.0 / (t as f64 + 2.0);
        for seed in 0..20 {
            let st = noise_and_finetune(loss.full_optimum(), &loss, &plan, &mut ChaCha8Rng::seed_from_u64(seed), go).unwrap();
            assert!(loss.retain_excess(st.average()) <= bound);
        }
    }

    #[test]
    fn finetune_chain_bound() {
        let spec = make_problem(1.0f64, 25.0, 2).unwrap();
        let loss = SyntheticQuadraticLoss::hard_instance(spec, 0.8, 0.01).unwrap();
        let split = *loss.split();
        let t = 10_000;
        let rule = FinetuneSchedule::TunedConstant.resolve(&spec, &split, 1.0, t).unwrap();
        let sens = Sensitivity::theoretical(&spec, &split);
        let plan = UnlearnPlan::with_kdp(1.0, sens, t, rule).unwrap();
        let xs: Vec<f64> = (0..50)
            .map(|r| {
                let st = noise_and_finetune(loss.full_optimum(), &loss, &plan, &mut ChaCha8Rng::seed_from_u64(r), go).unwrap();
                loss.retain_excess(st.average())
            })
            .collect();
        let m = xs.iter().sum::<f64>() / 50.0;
        let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0 / 50.0).sqrt();
        let bound = 25.0 * r1(&spec, &split) * 3f64.sqrt() / 100.0;
        assert!(m <= bound + 3.0 * se, "{m} vs {bound}");
    }
}
