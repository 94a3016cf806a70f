//! Brute-force numerical witnesses for the supporting lemmas.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Error, Result};
use crate::harness::finetune_final_excess;
use crate::losses::{LossOracle, RademacherMixture, SyntheticExperimentalLoss, SyntheticQuadraticLoss};
use crate::model::{make_problem, PrivacyBudget, ProblemSpec};
use crate::scalar::Scalar;
use crate::unlearn::r1;

/// Largest `T` for exact binomial enumeration.
pub const MAX_EXACT_T: usize = 60;

/// Outcome of one lemma check. `max_slack` is the smallest `bound - observed`
/// over all cases.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub lemma_id: String,
    pub cases_checked: usize,
    pub max_slack: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub skipped: bool,
}

impl LemmaReport {
    fn from_slacks(id: &str, slacks: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let (mut n, mut min) = (0usize, f64::INFINITY);
        for s in slacks {
            n += 1;
            // NaN slack counts as a failure
            min = if s.is_nan() { f64::NEG_INFINITY } else { min.min(s) };
        }
        Self {
            lemma_id: id.to_string(),
            cases_checked: n,
            max_slack: min,
            tolerance,
            passed: min >= -tolerance,
            skipped: false,
        }
    }

    fn skipped(id: &str) -> Self {
        Self { lemma_id: id.to_string(), cases_checked: 0, max_slack: f64::INFINITY, tolerance: 0.0, passed: true, skipped: true }
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.skipped {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        write!(f, "{status} {:<16} cases={:<7} max_slack={:.6e}", self.lemma_id, self.cases_checked, self.max_slack)
    }
}

fn has_optima<S: Scalar, L: LossOracle<S> + ?Sized>(loss: &L) -> bool {
    let d = loss.problem().dim;
    loss.full_optimum().dim() == d && loss.retain_optimum().dim() == d
}

fn distance_slack<S: Scalar, L: LossOracle<S> + ?Sized>(loss: &L) -> f64 {
    let bound = r1(loss.problem(), loss.split()).f64();
    bound - loss.full_optimum().distance(loss.retain_optimum()).f64()
}

fn gap_slack<S: Scalar, L: LossOracle<S> + ?Sized>(loss: &L) -> f64 {
    let p = loss.problem();
    let q = loss.split().rf_odds;
    let bound = (q * q * p.lipschitz * p.lipschitz / p.mu).f64();
    bound - loss.retain_excess(loss.full_optimum()).f64()
}

/// `|theta* - theta_r*| <= rf_odds L / mu`.
pub fn check_opt_distance<S: Scalar, L: LossOracle<S> + ?Sized>(loss: &L) -> LemmaReport {
    if !has_optima(loss) {
        return LemmaReport::skipped("opt_distance");
    }
    LemmaReport::from_slacks("opt_distance", [distance_slack(loss)], 1e-12)
}

/// `L_r(theta*) - L_r* <= rf_odds^2 L^2 / mu`.
pub fn check_opt_loss_gap<S: Scalar, L: LossOracle<S> + ?Sized>(loss: &L) -> LemmaReport {
    if !has_optima(loss) {
        return LemmaReport::skipped("opt_loss_gap");
    }
    LemmaReport::from_slacks("opt_loss_gap", [gap_slack(loss)], 1e-12)
}

enum AnyLoss {
    Quad(SyntheticQuadraticLoss<f64>),
    Exp(SyntheticExperimentalLoss<f64>),
}

/// Random problem constants and mixtures, alternating the two synthetic losses.
fn random_losses(n: usize, seed: u64) -> Result<Vec<AnyLoss>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mu = 10f64.powf(rng.random_range(-1.0..1.0));
            let l = 10f64.powf(rng.random_range(-1.0..2.0));
            let rf = rng.random_range(0.0..0.95);
            let mix = RademacherMixture::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rf)?;
            let d = 2 * rng.random_range(1..4);
            let spec = make_problem(mu, l, d)?;
            Ok(if i % 2 == 0 {
                AnyLoss::Quad(SyntheticQuadraticLoss::new(spec, mix)?)
            } else {
                AnyLoss::Exp(SyntheticExperimentalLoss::new(spec, mix)?)
            })
        })
        .collect()
}

/// Distance check over `n` random synthetic problems.
pub fn check_opt_distance_random(n: usize, seed: u64) -> Result<LemmaReport> {
    let losses = random_losses(n, seed)?;
    Ok(LemmaReport::from_slacks(
        "opt_distance",
        losses.iter().map(|l| match l {
            AnyLoss::Quad(q) => distance_slack(q),
            AnyLoss::Exp(x) => distance_slack(x),
        }),
        1e-12,
    ))
}

/// Loss-gap check over `n` random synthetic problems.
pub fn check_opt_loss_gap_random(n: usize, seed: u64) -> Result<LemmaReport> {
    let losses = random_losses(n, seed)?;
    Ok(LemmaReport::from_slacks(
        "opt_loss_gap",
        losses.iter().map(|l| match l {
            AnyLoss::Quad(q) => gap_slack(q),
            AnyLoss::Exp(x) => gap_slack(x),
        }),
        1e-12,
    ))
}

/// Law of the number of `+1` draws among `t` Rademacher draws of mean `gamma`.
pub fn binomial_pmf(t: usize, gamma: f64) -> Result<Vec<f64>> {
    if t > MAX_EXACT_T {
        return Err(Error::TooLarge { max: MAX_EXACT_T, got: t });
    }
    if !(gamma.abs() <= 1.0) {
        return domain(format!("gamma must lie in [-1, 1], got {gamma}"));
    }
    let p = 0.5 * (1.0 + gamma);
    let pmf = (0..=t)
        .map(|k| match p {
            _ if p <= 0.0 => f64::from(u8::from(k == 0)),
            _ if p >= 1.0 => f64::from(u8::from(k == t)),
            _ => (ln_binomial(t as u64, k as u64) + k as f64 * p.ln() + (t - k) as f64 * (-p).ln_1p()).exp(),
        })
        .collect();
    Ok(pmf)
}

/// Total variation between the `+1` counts of `t` draws with means `gamma`
/// and `gamma_p`, by enumeration. Only `t <= 60` is supported; beyond that use
/// the arcsine bound.
pub fn exact_binomial_tv(t: usize, gamma: f64, gamma_p: f64) -> Result<f64> {
    let a = binomial_pmf(t, gamma)?;
    let b = binomial_pmf(t, gamma_p)?;
    let tv = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(tv.min(1.0))
}

/// `(sqrt(T) / 2) |asin gamma' - asin gamma|`.
pub fn binomial_tv_bound(t: usize, gamma: f64, gamma_p: f64) -> f64 {
    (t as f64).sqrt() / 2.0 * (gamma_p.asin() - gamma.asin()).abs()
}

/// Exact TV against the arcsine bound for every `T <= t_max` on a
/// `grid_size x grid_size` grid over `[-0.999, 0.999]^2`.
pub fn check_binomial_tv_bound(t_max: usize, grid_size: usize) -> Result<LemmaReport> {
    if t_max > MAX_EXACT_T {
        return Err(Error::TooLarge { max: MAX_EXACT_T, got: t_max });
    }
    let grid: Vec<f64> = match grid_size {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| -0.999 + 1.998 * i as f64 / (n - 1) as f64).collect(),
    };
    let mut slacks = Vec::with_capacity(t_max * grid.len() * grid.len());
    for t in 1..=t_max {
        let pmfs = grid.iter().map(|&g| binomial_pmf(t, g)).collect::<Result<Vec<_>>>()?;
        for (i, &g) in grid.iter().enumerate() {
            for (j, &gp) in grid.iter().enumerate() {
                let tv = 0.5 * pmfs[i].iter().zip(&pmfs[j]).map(|(x, y)| (x - y).abs()).sum::<f64>();
                slacks.push(binomial_tv_bound(t, g, gp) - tv);
            }
        }
    }
    Ok(LemmaReport::from_slacks("binomial_tv", slacks, 1e-9))
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Worst-case TV between the noise-only outputs for two forget sets,
/// `2 Phi(1 / (2 kdp)) - 1`.
pub fn gaussian_worst_tv(kdp: f64) -> f64 {
    if kdp == 0.0 {
        return 1.0;
    }
    2.0 * std_normal_cdf(1.0 / (2.0 * kdp)) - 1.0
}

/// The epsilon-delta grid used by default: six values of each.
pub fn default_budget_grid() -> Result<Vec<PrivacyBudget<f64>>> {
    let eps = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0];
    let deltas = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1];
    eps.iter()
        .flat_map(|&e| deltas.iter().map(move |&d| PrivacyBudget::new(e, d)))
        .collect()
}

/// `2 Phi(1 / (2 kdp)) - 1 <= e^epsilon - 1 + delta` for every budget.
pub fn check_gaussian_tv_dp(budgets: &[PrivacyBudget<f64>]) -> LemmaReport {
    LemmaReport::from_slacks(
        "gaussian_tv_dp",
        budgets.iter().map(|b| b.epsilon.exp_m1() + b.delta - gaussian_worst_tv(b.kdp)),
        1e-12,
    )
}

/// Fine-tune rate `L R1 sqrt(1 + d kdp^2) / sqrt(T)` at each horizon, with
/// three standard errors of Monte Carlo slack.
pub fn check_finetune_rate(
    spec: &ProblemSpec<f64>,
    rf: f64,
    gamma: f64,
    kdp: f64,
    horizons: &[usize],
    reps: usize,
    seed: u64,
) -> Result<LemmaReport> {
    if horizons.iter().any(|&h| h == 0) {
        return domain("horizons must be positive");
    }
    let split = crate::model::ForgetSplit::new(rf)?;
    let r = r1(spec, &split);
    let mut slacks = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let (mean, se) = finetune_final_excess(spec, rf, gamma, kdp, t, reps, seed)?;
        let bound = spec.lipschitz * r * (1.0 + spec.dim as f64 * kdp * kdp).sqrt() / (t as f64).sqrt();
        slacks.push(bound + 3.0 * se - mean);
    }
    Ok(LemmaReport::from_slacks("finetune_rate", slacks, 0.0))
}
