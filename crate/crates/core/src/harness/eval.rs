//! Greedy evaluation of saved checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint;
use crate::baselines::{Agent, AgentKind};
use crate::env::{EnvConfig, TaskVariant};
use crate::error::{Error, Result};
use crate::hacman::{evaluate, run_episode, AgentAction, EvalResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentKind,
    pub variant: TaskVariant,
    pub seed: u64,
    pub checkpoint_step: usize,
    pub result: EvalResult,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        let r = &self.result;
        format!(
            "{} on {}: success {:.3} +/- {:.3} over {} episodes, mean length {:.2}, mean final flow {:.4}",
            self.agent,
            self.variant,
            r.success_rate,
            r.success_std_error,
            r.episodes.len(),
            r.mean_length,
            r.mean_final_flow
        )
    }
}

/// One line of a per-step evaluation transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub action: AgentAction,
    pub reward: f64,
    pub mean_flow: f64,
    pub success: bool,
}

pub fn evaluate_agent(
    agent: &Agent,
    env: &EnvConfig,
    variant: TaskVariant,
    episodes: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalResult> {
    evaluate(agent, env, &variant, episodes, seed, threads)
}

/// Per-step records of sequential greedy episodes; identical to the episodes
/// [`evaluate_agent`] runs with the same seed.
pub fn transcript(agent: &Agent, env: &EnvConfig, variant: TaskVariant, episodes: usize, seed: u64) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for ep in 0..episodes {
        let mut step = 0;
        run_episode(agent, env, &variant, seed, ep, |_, action, o| {
            step += 1;
            out.push(StepRecord {
                episode: ep,
                step,
                action: *action,
                reward: o.task_reward,
                mean_flow: o.mean_flow,
                success: o.success,
            });
        })?;
    }
    Ok(out)
}

/// Loads `checkpoint` and runs greedy episodes on `variant` (default: the training variant).
/// With `expected` set, a checkpoint of another agent kind is rejected.
pub fn eval_checkpoint(
    checkpoint: &Path,
    expected: Option<AgentKind>,
    episodes: usize,
    variant: Option<TaskVariant>,
    seed: u64,
    threads: usize,
) -> Result<(EvalReport, Agent, EnvConfig)> {
    let ckpt = checkpoint::load(checkpoint, expected)?;
    let variant = variant.unwrap_or(ckpt.variant);
    let result = evaluate_agent(&ckpt.agent, &ckpt.env, variant, episodes, seed, threads)?;
    let report = EvalReport {
        agent: ckpt.agent.kind(),
        variant,
        seed,
        checkpoint_step: ckpt.step,
        result,
    };
    Ok((report, ckpt.agent, ckpt.env))
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_transcript(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Checkpoint(e.to_string()))?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
