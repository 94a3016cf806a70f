//! Stochastic first-order loss oracles over a retain/forget mixture.
//!
//! Three families are provided: the quadratic hard instance whose stochastic
//! gradient depends on the data only through a `±1` draw, the experimental
//! variant of it with an L1 tail, and a regularized multiclass cross-entropy
//! over a concrete dataset.

mod erm;
mod synthetic;

pub use erm::{read_dataset_csv, split_dataset, write_dataset_csv, ErmDataset, ErmLoss, ErmOptions};
pub use synthetic::{SyntheticExperimentalLoss, SyntheticQuadraticLoss};

use rand::Rng;

use crate::error::{domain, Result};
use crate::model::{ForgetSplit, ParamVector, ProblemSpec};
use crate::scalar::Scalar;

/// First-order oracle used by the optimizers and the harness.
///
/// Gradient draws are retain-side only: unlearning and retraining never see
/// forget samples.
pub trait LossOracle<S: Scalar>: Sync {
    fn problem(&self) -> &ProblemSpec<S>;

    fn split(&self) -> &ForgetSplit<S>;

    /// Writes one stochastic (sub)gradient of the retain loss at `theta`.
    fn sample_gradient<R: Rng + ?Sized>(&self, theta: &[S], rng: &mut R, out: &mut [S]);

    /// `L_r(theta) - L_r*`.
    fn retain_excess(&self, theta: &[S]) -> S;

    /// Minimizer over the full mixture (the pre-trained model).
    fn full_optimum(&self) -> &ParamVector<S>;

    /// Minimizer over the retain distribution.
    fn retain_optimum(&self) -> &ParamVector<S>;

    /// Gradient accesses consumed by one call to [`Self::sample_gradient`].
    fn batch_size(&self) -> usize {
        1
    }

    /// How often (in steps) first-passage observers should evaluate the risk.
    fn eval_every(&self) -> usize {
        1
    }
}

/// Law of `g(xi)` under the retain/forget mixture: Rademacher with mean
/// `gamma_r` on the retain side and the constant `g_forget` on the forget side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RademacherMixture<S> {
    pub gamma_r: S,
    pub g_forget: S,
    pub rf: S,
}

impl<S: Scalar> RademacherMixture<S> {
    pub fn new(gamma_r: S, g_forget: S, rf: S) -> Result<Self> {
        if !(gamma_r.abs() <= S::one()) {
            return domain(format!("retain mean must lie in [-1, 1], got {gamma_r}"));
        }
        if !(g_forget.abs() <= S::one()) {
            return domain(format!("forget value must lie in [-1, 1], got {g_forget}"));
        }
        ForgetSplit::new(rf)?;
        Ok(Self { gamma_r, g_forget, rf })
    }

    /// Lower-bound construction: the forget side pulls the full mean toward
    /// zero as hard as it can, `g_forget = -sign(gamma) min(1, (1 - rf)|gamma| / rf)`.
    pub fn hard_instance(gamma_r: S, rf: S) -> Result<Self> {
        let one = S::one();
        let pull = if rf > S::zero() {
            one.min((one - rf) * gamma_r.abs() / rf)
        } else {
            one
        };
        Self::new(gamma_r, -gamma_r.sign0() * pull, rf)
    }

    /// `E_D[g] = (1 - rf) gamma_r + rf g_forget`.
    pub fn full_mean(&self) -> S {
        (S::one() - self.rf) * self.gamma_r + self.rf * self.g_forget
    }
}

/// Draws `g(xi)`: `±1` with `P(+1) = (1 + gamma_r) / 2` on the retain side, and
/// with probability `rf` the forget value when sampling the full mixture.
pub fn sample_g<S: Scalar, R: Rng + ?Sized>(mix: &RademacherMixture<S>, from_retain_only: bool, rng: &mut R) -> S {
    if !from_retain_only && rng.random::<f64>() < mix.rf.f64() {
        return mix.g_forget;
    }
    let p_plus = 0.5 * (1.0 + mix.gamma_r.f64());
    if rng.random::<f64>() < p_plus {
        S::one()
    } else {
        -S::one()
    }
}
