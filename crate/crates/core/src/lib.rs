//! Dual-memory engine for long-horizon text agents.
//!
//! Two memories sit around an LLM actor:
//!
//! * a symbolic **feasibility memory** ([`feasibility`]): small verifier
//!   programs written in a total rule language ([`rules`]), induced from
//!   rejected transitions, filtered for zero false rejections and selected by
//!   greedy max-coverage;
//! * a neural **progress memory** ([`progress`]): stage-anchored blueprints
//!   distilled from successful trajectories ([`distill`]) and retrieved by
//!   cosine similarity at task and anchor level.
//!
//! [`agent`] wires both into the plan / act / verify / refine / monitor loop,
//! [`textcraft`] is a native deterministic crafting environment used for
//! closed-loop runs, and [`harness`] holds the evaluation commands and
//! metrics.

pub mod agent;
pub mod backend;
pub mod distill;
pub mod feasibility;
pub mod harness;
pub mod model;
pub mod par;
pub mod progress;
pub mod prompts;
pub mod rules;
pub mod scene;
pub mod textcraft;

pub use model::{Env, Step, Task, Trajectory, Transition, TransitionPool, Validity};
