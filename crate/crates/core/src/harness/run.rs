//! Training runs that persist their streams to an output directory.
//!
//! Files written to `out_dir`:
//!
//! - `config.resolved`: the fully resolved configuration;
//! - `metrics.csv`: one row per training episode, header [`MetricsRecord::HEADER`];
//! - `events.jsonl`: `{"kind", "step", "payload"}` records for episodes,
//!   1000-step loss windows, evaluations and checkpoints;
//! - `checkpoint_<step>`: after every periodic evaluation and at the end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::checkpoint::{self, Checkpoint};
use super::config::RunConfig;
use crate::baselines::Agent;
use crate::env::PlanarPushEnv;
use crate::error::{Error, Result};
use crate::hacman::{train, EvalResult, LoopOptions, LossRecord, MetricsRecord, TrainSink, TrainSummary};

const TRAIN_STREAM: u64 = 0x7EA1_5EED_0000_0001;

/// Builds the configured agent from the run seed.
pub fn build_agent(cfg: &RunConfig) -> Result<Agent> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = Agent::new(cfg.agent, cfg.observation, &cfg.train, &mut rng)?;
    if let Agent::Td3(t) = &mut agent {
        t.lambda = cfg.resolved_lambda();
    }
    Ok(agent)
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("checkpoint_{step}"))
}

struct FileSink {
    dir: PathBuf,
    metrics: BufWriter<File>,
    events: BufWriter<File>,
    cfg: RunConfig,
    evals: Vec<(usize, f64)>,
}

impl FileSink {
    fn create(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let resolved = dir.join("config.resolved");
        std::fs::write(&resolved, cfg.to_text()).map_err(|e| Error::io(&resolved, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
        };
        let mut metrics = open("metrics.csv")?;
        writeln!(metrics, "{}", MetricsRecord::HEADER).map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
        Ok(FileSink {
            metrics,
            events: open("events.jsonl")?,
            dir,
            cfg: cfg.clone(),
            evals: vec![],
        })
    }

    fn event(&mut self, kind: &str, step: usize, payload: impl Serialize) -> Result<()> {
        let line = json!({ "kind": kind, "step": step, "payload": payload });
        writeln!(self.events, "{line}").map_err(|e| Error::io(self.dir.join("events.jsonl"), e))
    }

    fn save_checkpoint(&mut self, step: usize, agent: &Agent) -> Result<()> {
        let path = checkpoint_path(&self.dir, step);
        let ckpt = Checkpoint { agent: agent.clone(), env: self.cfg.env.clone(), variant: self.cfg.variant, step };
        checkpoint::save(&path, &ckpt)?;
        self.event("checkpoint", step, json!({ "path": path.file_name().and_then(|n| n.to_str()) }))
    }

    fn finish(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        self.events.flush().map_err(|e| Error::io(self.dir.join("events.jsonl"), e))
    }
}

impl TrainSink<Agent> for FileSink {
    fn on_metrics(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.metrics, "{}", r.to_csv_row()).map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        self.event("episode", r.step, r)
    }

    fn on_losses(&mut self, r: &LossRecord) -> Result<()> {
        self.event("losses", r.step, r)
    }

    fn on_eval(&mut self, step: usize, result: &EvalResult, agent: &Agent) -> Result<ControlFlow<()>> {
        self.evals.push((step, result.success_rate));
        self.event(
            "eval",
            step,
            json!({
                "episodes": result.episodes.len(),
                "success_rate": result.success_rate,
                "success_std_error": result.success_std_error,
                "mean_length": result.mean_length,
                "mean_final_flow": result.mean_final_flow,
            }),
        )?;
        self.save_checkpoint(step, agent)?;
        Ok(match self.cfg.stop_at_success {
            Some(t) if result.success_rate >= t => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: TrainSummary,
    pub agent: Agent,
    /// `(step, success_rate)` of every periodic evaluation.
    pub evals: Vec<(usize, f64)>,
    pub final_checkpoint: PathBuf,
}

/// Trains the configured agent and writes every output file.
pub fn run_training(cfg: &RunConfig, threads: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut sink = FileSink::create(cfg)?;
    let mut agent = build_agent(cfg)?;
    let mut env = PlanarPushEnv::new(cfg.env.clone(), cfg.variant, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let options = LoopOptions {
        eval: (cfg.eval_every_steps > 0).then(|| cfg.eval_settings(threads)),
        wall_time: cfg.wall_time,
    };
    let summary = train(&mut env, &mut agent, &options, &mut rng, &mut sink)?;
    let final_checkpoint = checkpoint_path(&sink.dir, summary.env_steps);
    if !final_checkpoint.exists() {
        sink.save_checkpoint(summary.env_steps, &agent)?;
    }
    sink.event("done", summary.env_steps, &summary.clone().without_eval_episodes())?;
    sink.finish()?;
    Ok(RunOutcome { evals: sink.evals.clone(), summary, agent, final_checkpoint })
}

impl TrainSummary {
    fn without_eval_episodes(mut self) -> Self {
        if let Some(e) = &mut self.last_eval {
            e.episodes.clear();
        }
        self
    }
}
