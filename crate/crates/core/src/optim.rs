//! Projected SGD with iterate averaging.

use std::ops::ControlFlow;

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::losses::LossOracle;
use crate::model::{project_to_ball, ParamVector, ProblemSpec};
use crate::scalar::Scalar;

/// Step-size schedule, which also fixes how iterates are averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule<S> {
    /// `eta_t = 2 / (mu (t + 2))`, weight `t + 1` on `theta_t`.
    DecayingAvgScratch,
    /// Same schedule written with the 1-based fine-tune index,
    /// `eta_t = 2 / (mu (t + 1))` for `t = 1..T`.
    DecayingAvgFinetune,
    /// Fixed step with uniform averaging.
    ConstantStep(S),
    /// `initial * factor^(floor(t / every))`, reporting the last iterate.
    StepDecay { initial: S, factor: S, every: usize },
}

/// How iterates enter the reported model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Weight `t + 1` on `theta_t`.
    Linear,
    Uniform,
    /// No averaging; the current iterate is reported.
    Last,
}

impl<S: Scalar> UpdateRule<S> {
    /// Step size of the update producing `theta_{k+1}` from `theta_k` (0-based `k`).
    pub fn step_size(&self, mu: S, k: usize) -> S {
        match *self {
            Self::DecayingAvgScratch => S::of(2.0) / (mu * S::of_usize(k + 2)),
            Self::DecayingAvgFinetune => {
                let t = k + 1;
                S::of(2.0) / (mu * S::of_usize(t + 1))
            }
            Self::ConstantStep(eta) => eta,
            Self::StepDecay { initial, factor, every } => {
                let n = (k / every.max(1)).min(i32::MAX as usize) as i32;
                initial * factor.powi(n)
            }
        }
    }

    pub fn averaging(&self) -> Averaging {
        match self {
            Self::DecayingAvgScratch | Self::DecayingAvgFinetune => Averaging::Linear,
            Self::ConstantStep(_) => Averaging::Uniform,
            Self::StepDecay { .. } => Averaging::Last,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ConstantStep(eta) if !(eta >= S::zero() && eta.is_finite()) => {
                domain(format!("constant step must be nonnegative and finite, got {eta}"))
            }
            Self::StepDecay { initial, factor, every } => {
                if !(initial >= S::zero() && initial.is_finite()) || !(factor > S::zero() && factor.is_finite()) {
                    return domain("step decay needs a nonnegative initial step and positive factor");
                }
                if every == 0 {
                    return domain("step decay interval must be positive");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn weight(&self, t: usize) -> S {
        match self.averaging() {
            Averaging::Linear => S::of_usize(t + 1),
            Averaging::Uniform | Averaging::Last => S::one(),
        }
    }
}

/// Current iterate plus the weighted running average of `theta_0..theta_t`.
///
/// The average is stored normalized rather than as a raw weighted sum, which
/// keeps long runs accurate in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct IterState<S> {
    pub theta: ParamVector<S>,
    average: Vec<S>,
    weight: S,
    pub step: usize,
}

impl<S: Scalar> IterState<S> {
    /// State before any step: the average is `theta0` itself with weight 1.
    pub fn new(theta0: ParamVector<S>) -> Self {
        Self { average: theta0.to_vec(), theta: theta0, weight: S::one(), step: 0 }
    }

    /// Sum of the weights applied so far.
    pub fn weight(&self) -> S {
        self.weight
    }

    /// Weighted sum of the iterates, `average * weight`.
    pub fn memory(&self) -> Vec<S> {
        self.average.iter().map(|&a| a * self.weight).collect()
    }

    /// The reported model as a slice, without allocating.
    pub fn average(&self) -> &[S] {
        &self.average
    }

    fn absorb(&mut self, averaging: Averaging, w: S) {
        match averaging {
            Averaging::Last => {
                self.average.copy_from_slice(&self.theta);
                self.weight = S::one();
            }
            _ => {
                self.weight = self.weight + w;
                let f = w / self.weight;
                for (a, &t) in self.average.iter_mut().zip(self.theta.iter()) {
                    *a = *a + f * (t - *a);
                }
            }
        }
    }
}

/// Normalized average of the iterates seen so far.
pub fn averaged_iterate<S: Scalar>(state: &IterState<S>) -> ParamVector<S> {
    ParamVector::new(state.average.clone()).expect("averages of finite iterates are finite")
}

/// Runs `steps` projected SGD updates on retain-side gradient draws, calling
/// `observer` after every step. Returning `Break` from the observer stops early.
pub fn run_iterative<S, L, R, F>(
    rule: &UpdateRule<S>,
    theta0: ParamVector<S>,
    loss: &L,
    steps: usize,
    rng: &mut R,
    observer: F,
) -> Result<IterState<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&IterState<S>) -> ControlFlow<()>,
{
    run_from(rule, IterState::new(theta0), loss, steps, rng, observer)
}

/// As [`run_iterative`], continuing an existing state.
pub fn run_from<S, L, R, F>(
    rule: &UpdateRule<S>,
    mut state: IterState<S>,
    loss: &L,
    steps: usize,
    rng: &mut R,
    mut observer: F,
) -> Result<IterState<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&IterState<S>) -> ControlFlow<()>,
{
    rule.validate()?;
    let spec: &ProblemSpec<S> = loss.problem();
    state.theta.check_dim(spec.dim)?;
    let averaging = rule.averaging();
    let mut grad = vec![S::zero(); spec.dim];
    for _ in 0..steps {
        let k = state.step;
        loss.sample_gradient(&state.theta, rng, &mut grad);
        let eta = rule.step_size(spec.mu, k);
        for (t, &g) in state.theta.iter_mut().zip(&grad) {
            *t = *t - eta * g;
        }
        project_to_ball(&mut state.theta, spec.radius);
        if state.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        state.step = k + 1;
        state.absorb(averaging, rule.weight(k + 1));
        if observer(&state).is_break() {
            break;
        }
    }
    Ok(state)
}

/// Constant step minimizing the fine-tune bound at horizon `T`:
/// `sqrt((1 + d kdp^2) r1^2 / (T L^2))`.
pub fn tuned_constant_step<S: Scalar>(spec: &ProblemSpec<S>, r1: S, kdp: S, horizon: usize) -> Result<S> {
    if horizon == 0 {
        return domain("horizon must be at least 1");
    }
    if !(r1 >= S::zero()) || !(kdp >= S::zero()) {
        return domain("r1 and kdp must be nonnegative");
    }
    let num = (S::one() + S::of_usize(spec.dim) * kdp * kdp) * r1 * r1;
    Ok((num / (S::of_usize(horizon) * spec.lipschitz * spec.lipschitz)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SyntheticQuadraticLoss;
    use crate::model::make_problem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(gamma: f64, d: usize) -> SyntheticQuadraticLoss<f64> {
        SyntheticQuadraticLoss::hard_instance(make_problem(1.0, 25.0, d).unwrap(), gamma, 0.0).unwrap()
    }

    fn go(state: &IterState<f64>) -> ControlFlow<()> {
        let _ = state;
        ControlFlow::Continue(())
    }

    #[test]
    fn schedules() {
        let s = UpdateRule::<f64>::DecayingAvgScratch;
        let f = UpdateRule::<f64>::DecayingAvgFinetune;
        assert_eq!(s.step_size(1.0, 0), 1.0);
        assert_eq!(s.step_size(2.0, 3), 0.2);
        assert!((0..100).all(|k| s.step_size(1.0, k) == f.step_size(1.0, k)));
        assert_eq!(UpdateRule::ConstantStep(0.3).step_size(1.0, 99), 0.3);
        let d = UpdateRule::StepDecay { initial: 1e-2f64, factor: 0.6, every: 1000 };
        assert_eq!(d.step_size(1.0, 999), 1e-2);
        assert!((d.step_size(1.0, 2500) - 1e-2 * 0.36).abs() < 1e-15);
        assert!(UpdateRule::ConstantStep(-1.0).validate().is_err());
        assert!(UpdateRule::StepDecay { initial: 1.0, factor: 0.5, every: 0 }.validate().is_err());
    }

    #[test]
    fn zero_steps_returns_start() {
        let loss = quad(0.5, 2);
        let th = ParamVector::new(vec![1.0, -2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = run_iterative(&UpdateRule::DecayingAvgScratch, th.clone(), &loss, 0, &mut rng, go).unwrap();
        assert_eq!(st.theta, th);
        assert_eq!(averaged_iterate(&st), th);
        assert_eq!(st.weight(), 1.0);
    }

    #[test]
    fn weighted_mean_arithmetic() {
        let mut st = IterState::new(ParamVector::new(vec![1.0f64, 0.0]).unwrap());
        st.theta = ParamVector::new(vec![4.0, 3.0]).unwrap();
        st.absorb(Averaging::Linear, 2.0);
        let avg = averaged_iterate(&st);
        assert!((avg[0] - 3.0).abs() < 1e-15 && (avg[1] - 2.0).abs() < 1e-15);
        assert_eq!(st.memory(), vec![9.0, 6.0]);
    }

    #[test]
    fn weights_sum_to_triangular_number() {
        let loss = quad(0.3, 1);
        for t in [0usize, 1, 3, 10, 1000] {
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            let st = run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::zeros(1), &loss, t, &mut rng, go)
                .unwrap();
            let expect = ((t + 1) * (t + 2) / 2) as f64;
            assert_eq!(st.weight(), expect);
            // normalized weights (k+1)/W sum to one
            let s: f64 = (0..=t).map(|k| (k + 1) as f64 / st.weight()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn three_step_average_matches_explicit_weights() {
        let loss = quad(0.3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut iterates = vec![vec![0.5, -0.5]];
        let st = run_iterative(
            &UpdateRule::DecayingAvgScratch,
            ParamVector::new(vec![0.5, -0.5]).unwrap(),
            &loss,
            3,
            &mut rng,
            |s| {
                iterates.push(s.theta.to_vec());
                ControlFlow::Continue(())
            },
        )
        .unwrap();
        let avg = averaged_iterate(&st);
        for j in 0..2 {
            let expect = iterates.iter().enumerate().map(|(k, th)| (k + 1) as f64 * th[j]).sum::<f64>() / 10.0;
            assert!((avg[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let loss = quad(0.8, 2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::zeros(2), &loss, 500, &mut rng, go).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn observer_can_stop_early() {
        let loss = quad(0.8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::zeros(1), &loss, 100, &mut rng, |s| {
            if s.step == 7 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(st.step, 7);
    }

    #[test]
    fn iterates_stay_in_ball() {
        let loss = quad(1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = loss.problem().radius;
        run_iterative(&UpdateRule::ConstantStep(5.0), ParamVector::zeros(3), &loss, 200, &mut rng, |s| {
            assert!(s.theta.norm() <= r * (1.0 + 1e-12));
            ControlFlow::Continue(())
        })
        .unwrap();
    }

    #[test]
    fn one_step_mean_map() {
        // E[theta_1] = (1 - eta_0 mu) theta_0 + eta_0 (L/2) gamma e_1, and eta_0 = 1/mu
        let loss = quad(0.0, 1);
        let n = 10_000;
        let mut xs = Vec::with_capacity(n);
        for r in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            let st = run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::basis(1, 0, 1.0), &loss, 1, &mut rng, go)
                .unwrap();
            xs.push(st.theta[0]);
        }
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(m.abs() <= 3.0 * sd / (n as f64).sqrt(), "{m}");
    }

    #[test]
    fn expected_iterate_follows_affine_recursion() {
        // without projection the mean obeys m_{k+1} = (1 - eta_k mu) m_k + eta_k (L/2) gamma
        let gamma = 0.3;
        let loss = quad(gamma, 1);
        let steps = 20;
        let theta0 = 2.0;
        let rule = UpdateRule::ConstantStep(0.05);
        let mut m = theta0;
        for k in 0..steps {
            let eta = rule.step_size(1.0, k);
            m = (1.0 - eta) * m + eta * 12.5 * gamma;
        }
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + r as u64);
                run_iterative(&rule, ParamVector::basis(1, 0, theta0), &loss, steps, &mut rng, go).unwrap().theta[0]
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        assert!((mean - m).abs() <= 4.0 * se, "{mean} vs {m} (se {se})");
    }

    #[test]
    fn decaying_rate_holds() {
        let loss = quad(0.8, 1);
        for t in [100usize, 1000, 10_000] {
            let ex: Vec<f64> = (0..50)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(r);
                    let st =
                        run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::zeros(1), &loss, t, &mut rng, go)
                            .unwrap();
                    loss.retain_excess(st.average())
                })
                .collect();
            let m = ex.iter().sum::<f64>() / 50.0;
            let se = (ex.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0 / 50.0).sqrt();
            let bound = 2.0 * 625.0 / (t as f64 + 2.0);
            assert!(m <= bound + 3.0 * se, "T={t}: {m} > {bound}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        struct Blowup(ProblemSpec<f64>, crate::model::ForgetSplit<f64>, ParamVector<f64>);
        impl LossOracle<f64> for Blowup {
            fn problem(&self) -> &ProblemSpec<f64> {
                &self.0
            }
            fn split(&self) -> &crate::model::ForgetSplit<f64> {
                &self.1
            }
            fn sample_gradient<R: Rng + ?Sized>(&self, _: &[f64], _: &mut R, out: &mut [f64]) {
                out.fill(f64::NAN);
            }
            fn retain_excess(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn full_optimum(&self) -> &ParamVector<f64> {
                &self.2
            }
            fn retain_optimum(&self) -> &ParamVector<f64> {
                &self.2
            }
        }
        let b = Blowup(make_problem(1.0, 1.0, 1).unwrap(), crate::model::ForgetSplit::new(0.0).unwrap(), ParamVector::zeros(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = run_iterative(&UpdateRule::DecayingAvgScratch, ParamVector::zeros(1), &b, 5, &mut rng, go).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0 }));
    }

    #[test]
    fn tuned_step_examples() {
        let p = make_problem(1.0f64, 25.0, 2).unwrap();
        assert_eq!(tuned_constant_step(&p, 0.0, 1.0, 10).unwrap(), 0.0);
        let r1 = 0.01 / 0.99 * 25.0;
        let s = tuned_constant_step(&p, r1, 1.0, 100).unwrap();
        assert!((s - 1.749e-3).abs() < 1e-6, "{s}");
        let s2 = tuned_constant_step(&p, r1, 1.0, 200).unwrap();
        assert!((s / s2 - 2f64.sqrt()).abs() < 1e-12);
        assert!(tuned_constant_step(&p, r1, 1.0, 0).is_err());
    }
}
