//! First-passage measurements and the phase-diagram sweep.

use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{LossOracle, SyntheticQuadraticLoss};
use crate::model::{ParamVector, ProblemSpec, RunConfig};
use crate::optim::{run_iterative, tuned_constant_step, IterState, UpdateRule};
use crate::scalar::Scalar;
use crate::unlearn::{noise_and_finetune, noise_only_unlearn, r1, Sensitivity, SensitivityMode, UnlearnPlan};

const SCRATCH_STREAM: u64 = 0;
const UNLEARN_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Scratch,
    Unlearn,
}

/// First-passage steps of one run, aligned with the configured thresholds.
/// `None` means the threshold was never reached within the budget.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<S> {
    pub kind: RunKind,
    pub kdp: Option<S>,
    pub thresholds: Vec<S>,
    pub first_passage: Vec<Option<usize>>,
    pub max_steps: usize,
    pub seed: u64,
    pub diverged: bool,
}

impl<S: Scalar> RunRecord<S> {
    /// Step count of threshold `i`, with censored runs counted at the budget.
    pub fn capped(&self, i: usize) -> usize {
        self.first_passage[i].unwrap_or(self.max_steps)
    }

    pub fn is_monotone(&self) -> bool {
        // thresholds descend, so passage times must not decrease
        self.first_passage.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => a <= b,
            (None, Some(_)) => false,
            _ => true,
        })
    }
}

/// Aggregated measurements of one `(e, kdp)` point. Times are in gradient
/// accesses, i.e. steps times batch size.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCell {
    pub e: f64,
    pub kdp: f64,
    pub t_scratch_mean: f64,
    pub t_unlearn_mean: f64,
    pub ratio: f64,
    pub censored_scratch: usize,
    pub censored_unlearn: usize,
    /// Standard errors of the two means.
    pub t_scratch_se: f64,
    pub t_unlearn_se: f64,
    /// Every scratch run censored, or some run diverged.
    pub invalid: bool,
}

impl PhaseCell {
    /// Any run contributed a capped value.
    pub fn is_censored(&self) -> bool {
        self.censored_scratch > 0 || self.censored_unlearn > 0
    }
}

/// 0 when unlearning is free, `inf` when only scratch is free.
pub fn complexity_ratio(mean_unlearn: f64, mean_scratch: f64) -> f64 {
    if mean_unlearn == 0.0 {
        0.0
    } else if mean_scratch > 0.0 {
        mean_unlearn / mean_scratch
    } else {
        f64::INFINITY
    }
}

/// RNG of repetition `rep`. Scratch and unlearn runs use separate streams;
/// all unlearn runs of a repetition share one stream whatever their `kdp`.
pub fn run_rng(seed: u64, rep: u64, kind: RunKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep));
    rng.set_stream(match kind {
        RunKind::Scratch => SCRATCH_STREAM,
        RunKind::Unlearn => UNLEARN_STREAM,
    });
    rng
}

/// Seed of horizon `index` in the sweep ladder.
pub fn horizon_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Tracker<'a, S> {
    thresholds: &'a [S],
    next: usize,
    fp: Vec<Option<usize>>,
}

impl<'a, S: Scalar> Tracker<'a, S> {
    fn new(thresholds: &'a [S]) -> Self {
        Self { thresholds, next: 0, fp: vec![None; thresholds.len()] }
    }

    fn record(&mut self, step: usize, excess: S) {
        while self.next < self.thresholds.len() && excess <= self.thresholds[self.next] {
            self.fp[self.next] = Some(step);
            self.next += 1;
        }
    }

    fn done(&self) -> bool {
        self.next == self.thresholds.len()
    }
}

fn track<S, L>(
    rule: &UpdateRule<S>,
    theta0: ParamVector<S>,
    loss: &L,
    max_steps: usize,
    thresholds: &[S],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Option<usize>>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
{
    let mut tracker = Tracker::new(thresholds);
    tracker.record(0, loss.retain_excess(&theta0));
    if tracker.done() || max_steps == 0 {
        return Ok(tracker.fp);
    }
    let every = loss.eval_every().max(1);
    run_iterative(rule, theta0, loss, max_steps, rng, |st: &IterState<S>| {
        if st.step % every == 0 || st.step == max_steps {
            tracker.record(st.step, loss.retain_excess(st.average()));
            if tracker.done() {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(tracker.fp)
}

fn finish<S: Scalar>(
    kind: RunKind,
    kdp: Option<S>,
    cfg_thresholds: &[S],
    max_steps: usize,
    seed: u64,
    fp: Result<Vec<Option<usize>>>,
) -> Result<RunRecord<S>> {
    let (first_passage, diverged) = match fp {
        Ok(fp) => (fp, false),
        Err(Error::Divergence { step }) => {
            log::warn!("{kind:?} run with seed {seed} diverged at step {step}");
            (vec![None; cfg_thresholds.len()], true)
        }
        Err(e) => return Err(e),
    };
    Ok(RunRecord { kind, kdp, thresholds: cfg_thresholds.to_vec(), first_passage, max_steps, seed, diverged })
}

/// Scratch retraining from zero with `cfg.scratch_rule` for `cfg.max_steps` steps.
pub fn measure_scratch<S, L>(loss: &L, cfg: &RunConfig<S>, rep: u64) -> Result<RunRecord<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
{
    scratch_run(loss, cfg, cfg.seed, rep, cfg.max_steps)
}

fn scratch_run<S, L>(loss: &L, cfg: &RunConfig<S>, seed: u64, rep: u64, max_steps: usize) -> Result<RunRecord<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
{
    cfg.validate()?;
    let mut rng = run_rng(seed, rep, RunKind::Scratch);
    let theta0 = ParamVector::zeros(loss.problem().dim);
    let fp = track(&cfg.scratch_rule, theta0, loss, max_steps, &cfg.thresholds, &mut rng);
    finish(RunKind::Scratch, None, &cfg.thresholds, max_steps, seed, fp)
}

/// Noise then fine-tuning from the full optimum, for `plan.finetune_steps`
/// steps. The check at step 0 happens after noising.
pub fn measure_unlearn<S, L>(loss: &L, plan: &UnlearnPlan<S>, cfg: &RunConfig<S>, rep: u64) -> Result<RunRecord<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
{
    unlearn_run(loss, plan, cfg, cfg.seed, rep)
}

fn unlearn_run<S, L>(loss: &L, plan: &UnlearnPlan<S>, cfg: &RunConfig<S>, seed: u64, rep: u64) -> Result<RunRecord<S>>
where
    S: Scalar,
    L: LossOracle<S> + ?Sized,
{
    cfg.validate()?;
    let mut rng = run_rng(seed, rep, RunKind::Unlearn);
    let fp = noise_only_unlearn(loss.full_optimum(), plan, &mut rng)
        .and_then(|theta0| track(&plan.rule, theta0, loss, plan.finetune_steps, &cfg.thresholds, &mut rng));
    finish(RunKind::Unlearn, Some(plan.kdp), &cfg.thresholds, plan.finetune_steps, seed, fp)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `n_reps` scratch and, for each `kdp`, `n_reps` unlearn repetitions at
/// every horizon of the ladder, and aggregates per `(e, kdp)` across horizons
/// and repetitions. Cells are ordered by threshold, then by `kdp`.
///
/// `factory(T)` builds the loss used at horizon `T`. Work units run on the
/// current rayon pool; the output does not depend on its size.
pub fn sweep_phase_diagram<S, L, F>(factory: F, cfg: &RunConfig<S>) -> Result<Vec<PhaseCell>>
where
    S: Scalar,
    L: LossOracle<S>,
    F: Fn(usize) -> Result<L> + Sync,
{
    cfg.validate()?;
    if cfg.kdp_grid.is_empty() {
        return crate::error::domain("kdp grid is empty");
    }
    let horizons = cfg.horizon_ladder();
    let losses = horizons.iter().map(|&t| factory(t)).collect::<Result<Vec<L>>>()?;
    let mut plans = Vec::with_capacity(horizons.len());
    for (&t, loss) in horizons.iter().zip(&losses) {
        let sens = Sensitivity::of_loss(cfg.sensitivity_mode, loss);
        let row = cfg
            .kdp_grid
            .iter()
            .map(|&k| {
                let rule = cfg.finetune.resolve(loss.problem(), loss.split(), k, t)?;
                UnlearnPlan::with_kdp(k, sens, t, rule)
            })
            .collect::<Result<Vec<_>>>()?;
        plans.push(row);
    }

    let n_k = cfg.kdp_grid.len();
    let jobs_per_h = (n_k + 1) * cfg.n_reps;
    let records = (0..horizons.len() * jobs_per_h)
        .into_par_iter()
        .map(|unit| {
            let h = unit / jobs_per_h;
            let job = (unit % jobs_per_h) / cfg.n_reps;
            let rep = (unit % cfg.n_reps) as u64;
            let seed = horizon_seed(cfg.seed, h);
            if job == 0 {
                scratch_run(&losses[h], cfg, seed, rep, horizons[h])
            } else {
                unlearn_run(&losses[h], &plans[h][job - 1], cfg, seed, rep)
            }
        })
        .collect::<Result<Vec<RunRecord<S>>>>()?;

    let batch = losses[0].batch_size() as f64;
    let slice = |h: usize, job: usize| {
        let start = h * jobs_per_h + job * cfg.n_reps;
        &records[start..start + cfg.n_reps]
    };
    let gather = |job: usize, i: usize| -> (Vec<f64>, usize, bool) {
        let mut xs = Vec::with_capacity(horizons.len() * cfg.n_reps);
        let (mut censored, mut diverged) = (0, false);
        for h in 0..horizons.len() {
            for r in slice(h, job) {
                xs.push(r.capped(i) as f64 * batch);
                censored += usize::from(r.first_passage[i].is_none());
                diverged |= r.diverged;
            }
        }
        (xs, censored, diverged)
    };

    let mut cells = Vec::with_capacity(cfg.thresholds.len() * n_k);
    for (i, &e) in cfg.thresholds.iter().enumerate() {
        let (xs, cs, ds) = gather(0, i);
        let (ms, ses) = mean_se(&xs);
        for (j, &k) in cfg.kdp_grid.iter().enumerate() {
            let (ys, cu, du) = gather(j + 1, i);
            let (mu_, seu) = mean_se(&ys);
            cells.push(PhaseCell {
                e: e.f64(),
                kdp: k.f64(),
                t_scratch_mean: ms,
                t_unlearn_mean: mu_,
                ratio: complexity_ratio(mu_, ms),
                censored_scratch: cs,
                censored_unlearn: cu,
                t_scratch_se: ses,
                t_unlearn_se: seu,
                invalid: cs == xs.len() || ds || du,
            });
        }
    }
    Ok(cells)
}

/// Mean retain excess of the averaged iterate after `horizon` fine-tune steps
/// with the tuned constant step, over `reps` runs on the quadratic hard instance.
/// Returns the mean and its standard error.
pub fn finetune_final_excess<S: Scalar>(
    spec: &ProblemSpec<S>,
    rf: S,
    gamma: S,
    kdp: S,
    horizon: usize,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let loss = SyntheticQuadraticLoss::hard_instance(*spec, gamma, rf)?;
    let split = *loss.split();
    let step = tuned_constant_step(spec, r1(spec, &split), kdp, horizon)?;
    let sens = Sensitivity::of_loss(SensitivityMode::Theoretical, &loss);
    let plan = UnlearnPlan::with_kdp(kdp, sens, horizon, UpdateRule::ConstantStep(step))?;
    let xs = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = run_rng(seed, rep, RunKind::Unlearn);
            let st = noise_and_finetune(loss.full_optimum(), &loss, &plan, &mut rng, |_| ControlFlow::Continue(()))?;
            Ok(loss.retain_excess(st.average()).f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&xs))
}

/// Smallest horizon `T` of `ladder` (ascending) at which the tuned constant-step
/// fine-tune reaches mean final excess `<= e`, or `None` if none does.
///
/// This is a minimax-style unlearning time: the step size is chosen knowing the
/// horizon, as in the upper-bound analysis, rather than read off a single
/// trajectory.
pub fn minimax_unlearn_time<S: Scalar>(
    spec: &ProblemSpec<S>,
    rf: S,
    gamma: S,
    kdp: S,
    e: f64,
    ladder: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Option<usize>> {
    for &t in ladder {
        let (m, _) = finetune_final_excess(spec, rf, gamma, kdp, t, reps, seed)?;
        if m <= e {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Geometric horizon ladder `round(10^(k / per_decade))` for `k` in `lo..=hi`, deduplicated.
pub fn decade_ladder(lo: i32, hi: i32, per_decade: u32) -> Vec<usize> {
    let mut v: Vec<usize> = (lo..=hi)
        .map(|k| 10f64.powf(k as f64 / per_decade as f64).round().max(1.0) as usize)
        .collect();
    v.dedup();
    v
}
