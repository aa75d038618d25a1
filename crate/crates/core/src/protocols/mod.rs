//! Round engines for split and federated training protocols.
//!
//! Every engine draws from one experiment RNG in the same order: holdout
//! split, partition seed, label cycle, model init, then per round the
//! schedule followed by one batch shuffle per client in schedule order. That
//! shared draw sequence is what lets different protocols be compared run for
//! run, and lets degenerate configurations reproduce each other bit-for-bit.

mod config;
mod engine;
mod eval;
mod record;

pub use config::{ExperimentConfig, L2Mode, ModelConfig, OrderConfig, Protocol, Regularization};
pub use engine::{
    run, run_fl_reference, run_multihead_fl, run_observed, run_sfl, run_sfl_hydra, run_splitfedv1,
    run_splitfedv3, run_splitnn, ClientStep, HeadUpdate, NoopObserver, Observer, Part1Handoff,
    RunOutput, ServerStep,
};
pub use eval::{evaluate, evaluate_predictions, Evaluation};
pub use record::{FinalModel, RunRecord};
