//! File-backed sweep configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use unlearn_core::{horizon_ladder, log_grid, ErmOptions, FinetuneSchedule, RunConfig, SensitivityMode, UpdateRule};

use crate::CliError;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LossMode {
    SyntheticQuadratic,
    SyntheticExperimental,
    Erm,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SyntheticQuadratic => "synthetic_quadratic",
            Self::SyntheticExperimental => "synthetic_experimental",
            Self::Erm => "erm",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Theoretical,
    Measured,
}

/// Step schedule names accepted by the `rule` keys.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    /// `2 / (mu (t + 2))` with linear averaging.
    Decaying,
    /// Constant step tuned to the horizon (fine-tune only).
    TunedConstant,
    /// Step decay of the real-data protocol.
    StepDecay,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub mu: f64,
    pub lipschitz: f64,
    pub dim: usize,
    pub rf: f64,
    pub loss: LossMode,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { mu: 1.0, lipschitz: 25.0, dim: 2, rf: 0.01, loss: LossMode::SyntheticExperimental }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub e_min: f64,
    pub e_max: f64,
    pub e_count: usize,
    pub kdp_min: f64,
    pub kdp_max: f64,
    pub kdp_count: usize,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub horizon_count: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            e_min: 1e-2,
            e_max: 1e2,
            e_count: 13,
            kdp_min: 1e-2,
            kdp_max: 1e2,
            kdp_count: 13,
            horizon_min: 1,
            horizon_max: 1_000_000,
            horizon_count: 13,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub n_reps: usize,
    pub sensitivity: Sensitivity,
    pub scratch_rule: RuleName,
    pub finetune_rule: RuleName,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            n_reps: 50,
            sensitivity: Sensitivity::Measured,
            scratch_rule: RuleName::Decaying,
            finetune_rule: RuleName::Decaying,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ErmSection {
    pub dataset: Option<PathBuf>,
    pub batch_size: usize,
    pub initial_step: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub l2_weight: f64,
    pub eval_every: usize,
    /// Step budget of every ERM run.
    pub max_steps: usize,
    pub rule: RuleName,
}

impl Default for ErmSection {
    fn default() -> Self {
        Self {
            dataset: None,
            batch_size: 64,
            initial_step: 1e-2,
            decay_factor: 0.6,
            decay_every_epochs: 1000,
            l2_weight: 1.0,
            eval_every: 10,
            max_steps: 3000,
            rule: RuleName::StepDecay,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { path: PathBuf::from("results.csv"), threads: 0 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub run: RunSection,
    pub erm: ErmSection,
    pub output: OutputSection,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Parses without cross-field validation, so command-line overrides can
    /// still fill gaps.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg = Self::from_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let g = &self.grid;
        if !(g.e_min > 0.0 && g.e_max >= g.e_min && g.e_count >= 1) {
            return Err("grid: need 0 < e_min <= e_max and e_count >= 1".into());
        }
        if !(g.kdp_min > 0.0 && g.kdp_max >= g.kdp_min && g.kdp_count >= 1) {
            return Err("grid: need 0 < kdp_min <= kdp_max and kdp_count >= 1".into());
        }
        if !(g.horizon_min >= 1 && g.horizon_max >= g.horizon_min && g.horizon_count >= 1) {
            return Err("grid: need 1 <= horizon_min <= horizon_max and horizon_count >= 1".into());
        }
        if self.run.n_reps == 0 {
            return Err("run: n_reps must be at least 1".into());
        }
        if self.run.scratch_rule == RuleName::TunedConstant {
            return Err("run: scratch_rule cannot be tuned_constant".into());
        }
        if self.problem.loss == LossMode::Erm {
            if self.erm.dataset.is_none() {
                return Err("erm: loss = \"erm\" requires erm.dataset".into());
            }
            let e = &self.erm;
            if e.batch_size == 0 || e.eval_every == 0 || e.max_steps == 0 || e.decay_every_epochs == 0 {
                return Err("erm: batch_size, eval_every, max_steps and decay_every_epochs must be positive".into());
            }
        }
        Ok(())
    }

    /// Thresholds from the largest down, as the harness expects.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut e = log_grid(self.grid.e_min, self.grid.e_max, self.grid.e_count);
        e.reverse();
        e.dedup();
        e
    }

    pub fn kdp_grid(&self) -> Vec<f64> {
        let mut k = log_grid(self.grid.kdp_min, self.grid.kdp_max, self.grid.kdp_count);
        k.dedup();
        k
    }

    pub fn erm_options(&self) -> ErmOptions<f64> {
        ErmOptions {
            l2_weight: self.erm.l2_weight,
            batch_size: self.erm.batch_size,
            eval_every: self.erm.eval_every,
            seed: self.run.seed,
            ..ErmOptions::default()
        }
    }

    fn rule(&self, name: RuleName, steps_per_epoch: usize) -> UpdateRule<f64> {
        match name {
            RuleName::Decaying | RuleName::TunedConstant => UpdateRule::DecayingAvgScratch,
            RuleName::StepDecay => UpdateRule::StepDecay {
                initial: self.erm.initial_step,
                factor: self.erm.decay_factor,
                every: self.erm.decay_every_epochs * steps_per_epoch.max(1),
            },
        }
    }

    /// Harness configuration. ERM runs use a single horizon of `erm.max_steps`
    /// and the ERM schedule for both phases.
    pub fn run_config(&self, steps_per_epoch: usize) -> Result<RunConfig<f64>, CliError> {
        let erm = self.problem.loss == LossMode::Erm;
        let max_steps = if erm { self.erm.max_steps } else { self.grid.horizon_max };
        let mut cfg = RunConfig::new(self.run.seed, max_steps, self.run.n_reps, self.thresholds(), self.kdp_grid())?
            .with_sensitivity(match self.run.sensitivity {
                Sensitivity::Theoretical => SensitivityMode::Theoretical,
                Sensitivity::Measured => SensitivityMode::Measured,
            });
        let (scratch, finetune) = if erm {
            (self.erm.rule, self.erm.rule)
        } else {
            (self.run.scratch_rule, self.run.finetune_rule)
        };
        cfg = cfg.with_scratch_rule(self.rule(scratch, steps_per_epoch));
        cfg = cfg.with_finetune(match finetune {
            RuleName::TunedConstant => FinetuneSchedule::TunedConstant,
            RuleName::Decaying => FinetuneSchedule::Rule(UpdateRule::DecayingAvgFinetune),
            other => FinetuneSchedule::Rule(self.rule(other, steps_per_epoch)),
        });
        if !erm {
            cfg = cfg.with_horizons(horizon_ladder(self.grid.horizon_min, self.grid.horizon_max, self.grid.horizon_count));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
