//! Certified machine unlearning for strongly convex stochastic problems.
//!
//! The crate measures how many stochastic gradient steps a "noise and
//! fine-tune" unlearner needs to reach a target excess risk, compared with
//! retraining from scratch, and provides the closed-form regime boundaries
//! that predict the outcome.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix double precision.

pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod optim;
pub mod results;
pub mod scalar;
pub mod theory;
pub mod unlearn;
pub mod verify;

pub use error::{Error, Result};
pub use harness::{
    complexity_ratio, decade_ladder, finetune_final_excess, measure_scratch, measure_unlearn, minimax_unlearn_time,
    sweep_phase_diagram, PhaseCell, RunKind, RunRecord,
};
pub use losses::{
    ErmDataset, ErmLoss, ErmOptions, LossOracle, RademacherMixture, SyntheticExperimentalLoss, SyntheticQuadraticLoss,
};
pub use model::{
    derive_kdp, horizon_ladder, log_grid, make_problem, ForgetSplit, ParamVector, PrivacyBudget, ProblemSpec, RunConfig,
};
pub use optim::{averaged_iterate, run_iterative, tuned_constant_step, Averaging, IterState, UpdateRule};
pub use scalar::Scalar;
pub use theory::{classify, RegimeLabel, RegimeParams};
pub use unlearn::{
    calibrate_noise, noise_and_finetune, noise_only_unlearn, trivial_regime_excess, FinetuneSchedule, Sensitivity,
    SensitivityMode, UnlearnPlan,
};

pub type ProblemSpec64 = ProblemSpec<f64>;
pub type ProblemSpec32 = ProblemSpec<f32>;
pub type ParamVector64 = ParamVector<f64>;
pub type ParamVector32 = ParamVector<f32>;
pub type RunConfig64 = RunConfig<f64>;
pub type UnlearnPlan64 = UnlearnPlan<f64>;
pub type QuadraticLoss64 = SyntheticQuadraticLoss<f64>;
pub type ExperimentalLoss64 = SyntheticExperimentalLoss<f64>;
pub type ErmLoss64 = ErmLoss<f64>;
