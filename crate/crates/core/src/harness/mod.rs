//! Configuration, persistence, evaluation and diagnostics around training runs.

pub mod checkpoint;
pub mod config;
pub mod critic_map;
pub mod eval;
pub mod gradcheck;
pub mod run;

pub use checkpoint::{params_digest, Checkpoint};
pub use config::RunConfig;
pub use eval::{eval_checkpoint, EvalReport};
pub use run::{build_agent, run_training, RunOutcome};
