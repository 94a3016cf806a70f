use rand::Rng;

use super::{sample_g, LossOracle, RademacherMixture};
use crate::error::{domain, Result};
use crate::model::{ForgetSplit, ParamVector, ProblemSpec};
use crate::scalar::Scalar;

fn check_g<S: Scalar>(g: S) -> Result<()> {
    if !(g.abs() <= S::one()) {
        return domain(format!("g value must lie in [-1, 1], got {g}"));
    }
    Ok(())
}

/// Retain mean used by the experimental protocol at horizon `t`: `1 / (2 sqrt(t))`.
pub(crate) fn horizon_gamma<S: Scalar>(horizon: usize) -> S {
    S::one() / (S::of(2.0) * S::of_usize(horizon.max(1)).sqrt())
}

/// `l(theta, xi) = (mu/2) |theta|^2 - (L/2) g(xi) theta_1`.
#[derive(Clone, Debug)]
pub struct SyntheticQuadraticLoss<S> {
    spec: ProblemSpec<S>,
    mix: RademacherMixture<S>,
    split: ForgetSplit<S>,
    full_opt: ParamVector<S>,
    retain_opt: ParamVector<S>,
}

impl<S: Scalar> SyntheticQuadraticLoss<S> {
    pub fn new(spec: ProblemSpec<S>, mix: RademacherMixture<S>) -> Result<Self> {
        let split = ForgetSplit::new(mix.rf)?;
        let scale = spec.lipschitz / (S::of(2.0) * spec.mu);
        Ok(Self {
            full_opt: ParamVector::basis(spec.dim, 0, scale * mix.full_mean()),
            retain_opt: ParamVector::basis(spec.dim, 0, scale * mix.gamma_r),
            spec,
            mix,
            split,
        })
    }

    /// Hard instance with retain mean `gamma` and the adversarial forget side.
    pub fn hard_instance(spec: ProblemSpec<S>, gamma: S, rf: S) -> Result<Self> {
        Self::new(spec, RademacherMixture::hard_instance(gamma, rf)?)
    }

    /// Instance used at sweep horizon `horizon`: retain mean `1 / (2 sqrt(T))`.
    pub fn for_horizon(spec: ProblemSpec<S>, rf: S, horizon: usize) -> Result<Self> {
        Self::hard_instance(spec, horizon_gamma(horizon), rf)
    }

    pub fn mixture(&self) -> &RademacherMixture<S> {
        &self.mix
    }

    /// `mu theta - (L/2) g e_1`.
    pub fn stochastic_gradient(&self, theta: &ParamVector<S>, g_value: S) -> Result<ParamVector<S>> {
        theta.check_dim(self.spec.dim)?;
        check_g(g_value)?;
        let mut out = vec![S::zero(); self.spec.dim];
        self.write_gradient(theta, g_value, &mut out);
        ParamVector::new(out)
    }

    /// Gradient of the expected retain loss.
    pub fn retain_gradient(&self, theta: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.spec.dim];
        self.write_gradient(theta, self.mix.gamma_r, &mut out);
        out
    }

    /// `(mu/2) |theta - theta_r*|^2`.
    pub fn exact_retain_excess(&self, theta: &ParamVector<S>) -> Result<S> {
        theta.check_dim(self.spec.dim)?;
        Ok(self.retain_excess(theta))
    }

    fn write_gradient(&self, theta: &[S], g: S, out: &mut [S]) {
        let mu = self.spec.mu;
        for (o, &t) in out.iter_mut().zip(theta) {
            *o = mu * t;
        }
        out[0] = out[0] - self.spec.lipschitz / S::of(2.0) * g;
    }
}

impl<S: Scalar> LossOracle<S> for SyntheticQuadraticLoss<S> {
    fn problem(&self) -> &ProblemSpec<S> {
        &self.spec
    }

    fn split(&self) -> &ForgetSplit<S> {
        &self.split
    }

    fn sample_gradient<R: Rng + ?Sized>(&self, theta: &[S], rng: &mut R, out: &mut [S]) {
        let g = sample_g(&self.mix, true, rng);
        self.write_gradient(theta, g, out);
    }

    fn retain_excess(&self, theta: &[S]) -> S {
        let half_mu = self.spec.mu / S::of(2.0);
        let d2: S = theta
            .iter()
            .zip(self.retain_opt.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        half_mu * d2
    }

    fn full_optimum(&self) -> &ParamVector<S> {
        &self.full_opt
    }

    fn retain_optimum(&self) -> &ParamVector<S> {
        &self.retain_opt
    }
}

/// Non-smooth experimental loss in even dimension `d`:
/// `(mu/2)|theta|^2 - (L/4) g sum_{i<=d/2} theta_i + (L/4) sum_{i>d/2} |theta_i|`.
#[derive(Clone, Debug)]
pub struct SyntheticExperimentalLoss<S> {
    spec: ProblemSpec<S>,
    mix: RademacherMixture<S>,
    split: ForgetSplit<S>,
    full_opt: ParamVector<S>,
    retain_opt: ParamVector<S>,
}

impl<S: Scalar> SyntheticExperimentalLoss<S> {
    pub fn new(spec: ProblemSpec<S>, mix: RademacherMixture<S>) -> Result<Self> {
        if spec.dim % 2 != 0 {
            return domain(format!("experimental loss needs an even dimension, got {}", spec.dim));
        }
        let split = ForgetSplit::new(mix.rf)?;
        let half = spec.dim / 2;
        let scale = spec.lipschitz / (S::of(4.0) * spec.mu);
        let front = |v: S| {
            let mut p = ParamVector::zeros(spec.dim);
            p[..half].iter_mut().for_each(|x| *x = v);
            p
        };
        Ok(Self {
            full_opt: front(scale * mix.full_mean()),
            retain_opt: front(scale * mix.gamma_r),
            spec,
            mix,
            split,
        })
    }

    pub fn hard_instance(spec: ProblemSpec<S>, gamma: S, rf: S) -> Result<Self> {
        Self::new(spec, RademacherMixture::hard_instance(gamma, rf)?)
    }

    /// Instance used at sweep horizon `horizon`: retain mean `1 / (2 sqrt(T))`.
    pub fn for_horizon(spec: ProblemSpec<S>, rf: S, horizon: usize) -> Result<Self> {
        Self::hard_instance(spec, horizon_gamma(horizon), rf)
    }

    pub fn mixture(&self) -> &RademacherMixture<S> {
        &self.mix
    }

    pub fn stochastic_gradient(&self, theta: &ParamVector<S>, g_value: S) -> Result<ParamVector<S>> {
        theta.check_dim(self.spec.dim)?;
        check_g(g_value)?;
        let mut out = vec![S::zero(); self.spec.dim];
        self.write_gradient(theta, g_value, &mut out);
        ParamVector::new(out)
    }

    /// Expected retain loss `L_r(theta)`.
    pub fn retain_loss(&self, theta: &[S]) -> S {
        let (mu, quarter_l) = (self.spec.mu, self.spec.lipschitz / S::of(4.0));
        let half = self.spec.dim / 2;
        let quad: S = theta.iter().map(|&t| t * t).sum::<S>() * mu / S::of(2.0);
        let lin: S = theta[..half].iter().copied().sum::<S>() * quarter_l * self.mix.gamma_r;
        let l1: S = theta[half..].iter().map(|t| t.abs()).sum::<S>() * quarter_l;
        quad - lin + l1
    }

    pub fn exact_retain_excess(&self, theta: &ParamVector<S>) -> Result<S> {
        theta.check_dim(self.spec.dim)?;
        Ok(self.retain_excess(theta))
    }

    fn write_gradient(&self, theta: &[S], g: S, out: &mut [S]) {
        let (mu, quarter_l) = (self.spec.mu, self.spec.lipschitz / S::of(4.0));
        let half = self.spec.dim / 2;
        for i in 0..self.spec.dim {
            out[i] = if i < half {
                mu * theta[i] - quarter_l * g
            } else {
                mu * theta[i] + quarter_l * theta[i].sign0()
            };
        }
    }
}

impl<S: Scalar> LossOracle<S> for SyntheticExperimentalLoss<S> {
    fn problem(&self) -> &ProblemSpec<S> {
        &self.spec
    }

    fn split(&self) -> &ForgetSplit<S> {
        &self.split
    }

    fn sample_gradient<R: Rng + ?Sized>(&self, theta: &[S], rng: &mut R, out: &mut [S]) {
        let g = sample_g(&self.mix, true, rng);
        self.write_gradient(theta, g, out);
    }

    fn retain_excess(&self, theta: &[S]) -> S {
        // front half: (mu/2)(x - c)^2 around the tilted optimum c; back half: the
        // L1-penalized quadratic, minimized at 0.
        let (mu, quarter_l) = (self.spec.mu, self.spec.lipschitz / S::of(4.0));
        let half = self.spec.dim / 2;
        let c = self.retain_opt[0];
        let front: S = theta[..half].iter().map(|&x| (x - c) * (x - c)).sum();
        let back_sq: S = theta[half..].iter().map(|&x| x * x).sum();
        let back_abs: S = theta[half..].iter().map(|x| x.abs()).sum();
        mu / S::of(2.0) * (front + back_sq) + quarter_l * back_abs
    }

    fn full_optimum(&self) -> &ParamVector<S> {
        &self.full_opt
    }

    fn retain_optimum(&self) -> &ParamVector<S> {
        &self.retain_opt
    }
}
