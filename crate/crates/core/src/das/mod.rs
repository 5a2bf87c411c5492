//! Differentiable search over accelerator designs.
//!
//! Every design parameter (NoC, PE budget, per-layer tilings, loop-order
//! slots and sub-accelerator assignment) gets its own logit vector. Each step
//! draws 16 hard designs by Gumbel-Softmax argmax, costs them with
//! [`crate::hwmodel`], and moves the logits along the mean gradient of
//! `c * sum_s w_s[choice_s]`, where `w_s` are the soft weights of a draw.
//! By default `c` is the log cost relative to the infeasibility penalty,
//! minus the mean over the other draws, compressed by a power below one. One
//! draw per step falls back to a running-mean baseline, and the raw cost is
//! available through [`DasConfig`]. Loop orders are sampled as six picks
//! without replacement.
//!
//! [`brute_force`] and [`random_search`] provide reference points on small
//! restricted spaces.

mod search;
mod space;

pub use search::{
    brute_force, das_step, das_step_with, derive_design, evaluate_design, infeasible_penalty, objective_cycles,
    random_search, run_das, sample_design, write_trace_csv, DasConfig, DasOutcome, DasState, DesignSample, Evaluated,
    Objective, StepRecord, Weighting, BRUTE_FORCE_LIMIT,
};
pub use space::{pes_menu, LayerMenu, OrderMenu, ParamKind, ParamSpec, SearchSpace};
