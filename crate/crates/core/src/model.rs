//! Problem constants, privacy budget, forget split and the parameter vector.
//!
//! Everything here is immutable after construction; derived quantities are
//! computed once in the constructors so that every module reads the same
//! values.

use std::ops::{Deref, DerefMut};

use crate::error::{domain, Error, Result};
use crate::optim::UpdateRule;
use crate::scalar::Scalar;
use crate::unlearn::{FinetuneSchedule, SensitivityMode};

/// Constants of a `mu`-strongly convex, `lipschitz`-Lipschitz problem on the
/// ball of radius `radius = L / (2 mu)` in dimension `dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemSpec<S> {
    pub mu: S,
    pub lipschitz: S,
    pub dim: usize,
    /// `L / (2 mu)`.
    pub radius: S,
    /// Excess risk of the zero initialization, `L^2 / (8 mu)`.
    pub e0: S,
}

impl<S: Scalar> ProblemSpec<S> {
    pub fn new(mu: S, lipschitz: S, dim: usize) -> Result<Self> {
        if !(mu > S::zero() && mu.is_finite()) {
            return domain(format!("mu must be positive and finite, got {mu}"));
        }
        if !(lipschitz > S::zero() && lipschitz.is_finite()) {
            return domain(format!("Lipschitz constant must be positive and finite, got {lipschitz}"));
        }
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        let two = S::of(2.0);
        Ok(Self {
            mu,
            lipschitz,
            dim,
            radius: lipschitz / (two * mu),
            e0: lipschitz * lipschitz / (S::of(8.0) * mu),
        })
    }
}

/// Free-function form of [`ProblemSpec::new`].
pub fn make_problem<S: Scalar>(mu: S, lipschitz: S, dim: usize) -> Result<ProblemSpec<S>> {
    ProblemSpec::new(mu, lipschitz, dim)
}

/// Fraction `rf` of the training mixture that must be forgotten.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForgetSplit<S> {
    pub rf: S,
    /// `rf / (1 - rf)`.
    pub rf_odds: S,
}

impl<S: Scalar> ForgetSplit<S> {
    pub fn new(rf: S) -> Result<Self> {
        if !(rf >= S::zero() && rf < S::one()) {
            return domain(format!("forget fraction must lie in [0, 1), got {rf}"));
        }
        Ok(Self { rf, rf_odds: rf / (S::one() - rf) })
    }
}

/// Gaussian-mechanism constant `kappa = sqrt(2 ln(1.25 / delta)) / epsilon`.
pub fn derive_kdp<S: Scalar>(epsilon: S, delta: S) -> Result<S> {
    if !(epsilon > S::zero() && epsilon.is_finite()) {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if !(delta > S::zero() && delta < S::one()) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok((S::of(2.0) * (S::of(1.25) / delta).ln()).sqrt() / epsilon)
}

/// An `(epsilon, delta)` unlearning budget together with its noise multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget<S> {
    pub epsilon: S,
    pub delta: S,
    pub kdp: S,
}

impl<S: Scalar> PrivacyBudget<S> {
    pub fn new(epsilon: S, delta: S) -> Result<Self> {
        let kdp = derive_kdp(epsilon, delta)?;
        Ok(Self { epsilon, delta, kdp })
    }

    /// Whether `delta` lies in `[1e-8, epsilon]`, the range assumed by the
    /// lower bound on unlearning time.
    pub fn in_lower_bound_range(&self) -> bool {
        self.delta >= S::of(1e-8) && self.delta <= self.epsilon
    }
}

/// Model parameters. Always finite.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector<S>(Vec<S>);

impl<S: Scalar> ParamVector<S> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![S::zero(); dim])
    }

    pub fn new(coords: Vec<S>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|x| !x.is_finite()) {
            return domain(format!("parameter coordinate {i} is not finite"));
        }
        Ok(Self(coords))
    }

    /// `scale * e_index`.
    pub fn basis(dim: usize, index: usize, scale: S) -> Self {
        let mut v = Self::zeros(dim);
        v.0[index] = scale;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> S {
        self.0.iter().map(|&x| x * x).sum()
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &Self) -> S {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            .sqrt()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.dim() });
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    /// Rescales onto the closed ball of the given radius if outside it.
    pub fn project_to_ball(&mut self, radius: S) {
        project_to_ball(&mut self.0, radius);
    }
}

impl<S> Deref for ParamVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for ParamVector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

pub(crate) fn project_to_ball<S: Scalar>(x: &mut [S], radius: S) {
    let n = x.iter().map(|&v| v * v).sum::<S>().sqrt();
    if n > radius {
        let f = radius / n;
        x.iter_mut().for_each(|v| *v = *v * f);
    }
}

/// Monte Carlo configuration shared by the first-passage measurements and the
/// phase-diagram sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<S> {
    pub seed: u64,
    /// Step budget of a single run. The sweep overrides it per horizon.
    pub max_steps: usize,
    pub n_reps: usize,
    /// Target excess risks, strictly decreasing.
    pub thresholds: Vec<S>,
    pub kdp_grid: Vec<S>,
    pub sensitivity_mode: SensitivityMode,
    /// Horizon ladder of the sweep. Empty means a single horizon `max_steps`.
    pub horizons: Vec<usize>,
    pub scratch_rule: UpdateRule<S>,
    pub finetune: FinetuneSchedule<S>,
}

impl<S: Scalar> RunConfig<S> {
    pub fn new(seed: u64, max_steps: usize, n_reps: usize, thresholds: Vec<S>, kdp_grid: Vec<S>) -> Result<Self> {
        let cfg = Self {
            seed,
            max_steps,
            n_reps,
            thresholds,
            kdp_grid,
            sensitivity_mode: SensitivityMode::Measured,
            horizons: Vec::new(),
            scratch_rule: UpdateRule::DecayingAvgScratch,
            finetune: FinetuneSchedule::Rule(UpdateRule::DecayingAvgFinetune),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_horizons(mut self, horizons: Vec<usize>) -> Self {
        self.horizons = horizons;
        self
    }

    pub fn with_sensitivity(mut self, mode: SensitivityMode) -> Self {
        self.sensitivity_mode = mode;
        self
    }

    pub fn with_scratch_rule(mut self, rule: UpdateRule<S>) -> Self {
        self.scratch_rule = rule;
        self
    }

    pub fn with_finetune(mut self, schedule: FinetuneSchedule<S>) -> Self {
        self.finetune = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return domain("n_reps must be at least 1");
        }
        if self.max_steps == 0 && self.horizons.is_empty() {
            return domain("max_steps must be at least 1");
        }
        if self.thresholds.is_empty() {
            return domain("threshold grid is empty");
        }
        if self.thresholds.iter().any(|&e| !(e > S::zero() && e.is_finite())) {
            return domain("thresholds must be strictly positive and finite");
        }
        if self.thresholds.windows(2).any(|w| w[1] >= w[0]) {
            return domain("thresholds must be strictly decreasing");
        }
        if self.kdp_grid.iter().any(|&k| !(k >= S::zero() && k.is_finite())) {
            return domain("kdp values must be nonnegative and finite");
        }
        if self.horizons.iter().any(|&h| h == 0) {
            return domain("horizons must be positive");
        }
        Ok(())
    }

    /// The horizon ladder actually swept.
    pub fn horizon_ladder(&self) -> Vec<usize> {
        if self.horizons.is_empty() {
            vec![self.max_steps]
        } else {
            self.horizons.clone()
        }
    }
}

/// `count` values spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Log-spaced integer horizons between `lo` and `hi`, rounded and deduplicated.
pub fn horizon_ladder(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let mut h: Vec<usize> = log_grid(lo.max(1) as f64, hi.max(1) as f64, count)
        .into_iter()
        .map(|x| (x.round() as usize).max(1))
        .collect();
    h.dedup();
    h
}
