//! Interaction loop, update schedule and greedy evaluation.

use std::collections::VecDeque;
use std::ops::ControlFlow;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::AgentObs;
use super::replay::{AgentAction, ReplayBuffer, Transition};
use super::{CriticStats, HacmanAgent, TrainConfig};
use crate::env::{EnvConfig, PlanarPushEnv, TaskVariant};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Explore,
    Greedy,
}

/// Result of executing one agent action in the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Reward used for learning (task reward plus any shaping).
    pub reward: f64,
    /// Negative mean flow norm after the step.
    pub task_reward: f64,
    pub success: bool,
    /// Episode over (success or step limit).
    pub done: bool,
    pub mean_flow: f64,
}

/// Anything the training loop can drive.
pub trait Learner {
    fn train_config(&self) -> &TrainConfig;

    /// Called after every environment reset.
    fn on_reset(&self, _env: &mut PlanarPushEnv) {}

    fn act(&self, obs: &AgentObs, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<AgentAction>;

    /// Uniform action used while warming up the buffer.
    fn random_action(&self, obs: &AgentObs, rng: &mut ChaCha8Rng) -> Result<AgentAction>;

    fn execute(&self, env: &mut PlanarPushEnv, action: &AgentAction) -> Result<StepOutcome>;

    fn update_critics(&mut self, batch: &[&Transition], rng: &mut ChaCha8Rng) -> Result<CriticStats>;

    fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64>;

    fn update_targets(&mut self) -> Result<()>;
}

/// Executes a contact action and reports the plain task reward.
pub fn execute_contact(env: &mut PlanarPushEnv, action: &AgentAction) -> Result<StepOutcome> {
    let res = match *action {
        AgentAction::Contact(a) => env.step(&a)?,
        AgentAction::Regress { location, motion } => env.step_regressed(location, motion),
        AgentAction::Delta(m) => env.step_delta(m),
    };
    Ok(StepOutcome {
        reward: res.reward,
        task_reward: res.reward,
        success: res.success,
        done: res.terminal,
        mean_flow: res.mean_flow,
    })
}

impl Learner for HacmanAgent {
    fn train_config(&self) -> &TrainConfig {
        &self.config
    }

    fn act(&self, obs: &AgentObs, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        self.select_action(obs, mode, rng).map(AgentAction::Contact)
    }

    fn random_action(&self, obs: &AgentObs, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        HacmanAgent::random_action(obs, rng).map(AgentAction::Contact)
    }

    fn execute(&self, env: &mut PlanarPushEnv, action: &AgentAction) -> Result<StepOutcome> {
        execute_contact(env, action)
    }

    fn update_critics(&mut self, batch: &[&Transition], rng: &mut ChaCha8Rng) -> Result<CriticStats> {
        HacmanAgent::update_critics(self, batch, rng)
    }

    fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64> {
        HacmanAgent::update_actor(self, batch)
    }

    fn update_targets(&mut self) -> Result<()> {
        HacmanAgent::update_targets(self)
    }
}

/// One row of the training metrics stream, emitted at the end of every episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub episode: usize,
    /// Success fraction over the most recent training episodes.
    pub success_rate: f64,
    pub mean_episode_reward: f64,
    /// Means over the updates since the previous row; NaN when there were none.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_q: f64,
    pub buffer_size: usize,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub const HEADER: &'static str =
        "step,episode,success_rate,mean_episode_reward,actor_loss,critic_loss,mean_q,buffer_size,wall_time_s";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.success_rate,
            self.mean_episode_reward,
            self.actor_loss,
            self.critic_loss,
            self.mean_q,
            self.buffer_size,
            self.wall_time_s
        )
    }

    pub fn from_csv_row(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields, found {}", f.len()));
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|e| format!("field {i}: {e}"));
        let flt = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"));
        Ok(MetricsRecord {
            step: int(0)?,
            episode: int(1)?,
            success_rate: flt(2)?,
            mean_episode_reward: flt(3)?,
            actor_loss: flt(4)?,
            critic_loss: flt(5)?,
            mean_q: flt(6)?,
            buffer_size: int(7)?,
            wall_time_s: flt(8)?,
        })
    }
}

/// Loss means over a fixed window of environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub success: bool,
    pub length: usize,
    pub total_reward: f64,
    pub final_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: Vec<EpisodeSummary>,
    pub success_rate: f64,
    /// Binomial standard error of the success rate.
    pub success_std_error: f64,
    pub mean_length: f64,
    pub mean_final_flow: f64,
}

impl EvalResult {
    pub fn from_episodes(episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len().max(1) as f64;
        let p = episodes.iter().filter(|e| e.success).count() as f64 / n;
        EvalResult {
            success_rate: p,
            success_std_error: (p * (1.0 - p) / n).sqrt(),
            mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
            mean_final_flow: episodes.iter().map(|e| e.final_flow).sum::<f64>() / n,
            episodes,
        }
    }
}

/// Periodic greedy evaluation during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// 0 disables periodic evaluation.
    pub every_steps: usize,
    pub episodes: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            every_steps: 5_000,
            episodes: 100,
            seed: 0,
            threads: 1,
        }
    }
}

/// Receives the training streams.
pub trait TrainSink<L: ?Sized> {
    fn on_metrics(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    fn on_losses(&mut self, _record: &LossRecord) -> Result<()> {
        Ok(())
    }

    /// Return `ControlFlow::Break` to stop training after this evaluation.
    fn on_eval(&mut self, _step: usize, _result: &EvalResult, _agent: &L) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }
}

/// Sink that discards everything.
pub struct NullSink;

impl<L: ?Sized> TrainSink<L> for NullSink {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub env_steps: usize,
    pub episodes: usize,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub target_updates: usize,
    pub last_eval: Option<EvalResult>,
    pub stopped_early: bool,
}

/// Fractional-rate trigger: accumulates `rate` per tick and fires once per whole unit.
#[derive(Debug, Clone, Copy, Default)]
struct Credit(f64);

impl Credit {
    fn take(&mut self, rate: f64) -> usize {
        self.0 += rate;
        let n = (self.0 + 1e-9).floor();
        self.0 -= n;
        n as usize
    }
}

#[derive(Debug, Default)]
struct LossWindow {
    critic: (f64, f64, usize),
    actor: (f64, usize),
}

impl LossWindow {
    fn add_critic(&mut self, s: CriticStats) {
        self.critic.0 += s.loss;
        self.critic.1 += s.mean_q;
        self.critic.2 += 1;
    }

    fn add_actor(&mut self, l: f64) {
        self.actor.0 += l;
        self.actor.1 += 1;
    }

    fn means(&self) -> (f64, f64, f64) {
        let c = self.critic.2 as f64;
        let a = self.actor.1 as f64;
        let nan_div = |x: f64, n: f64| if n > 0.0 { x / n } else { f64::NAN };
        (nan_div(self.actor.0, a), nan_div(self.critic.0, c), nan_div(self.critic.1, c))
    }
}

const ROLLING_EPISODES: usize = 100;
pub const LOSS_WINDOW_STEPS: usize = 1_000;

/// Options that do not affect learning.
#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    pub eval: Option<EvalSettings>,
    /// Record real elapsed time in metrics rows; otherwise 0, keeping streams reproducible.
    pub wall_time: bool,
}

/// Runs `train_config().total_env_steps` environment steps.
pub fn train<L: Learner + Sync>(
    env: &mut PlanarPushEnv,
    agent: &mut L,
    options: &LoopOptions,
    rng: &mut ChaCha8Rng,
    sink: &mut dyn TrainSink<L>,
) -> Result<TrainSummary> {
    let cfg = agent.train_config().clone();
    let started = Instant::now();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut summary = TrainSummary {
        env_steps: 0,
        episodes: 0,
        critic_updates: 0,
        actor_updates: 0,
        target_updates: 0,
        last_eval: None,
        stopped_early: false,
    };
    let (mut critic_credit, mut actor_credit, mut target_credit) = (Credit::default(), Credit::default(), Credit::default());
    let mut row_losses = LossWindow::default();
    let mut window_losses = LossWindow::default();
    let mut recent: VecDeque<(bool, f64)> = VecDeque::with_capacity(ROLLING_EPISODES);
    let mut episode_reward = 0.0;

    if cfg.total_env_steps > 0 {
        env.reset();
        agent.on_reset(env);
    }
    let mut obs = Arc::new(AgentObs::from_env(env));

    for step in 1..=cfg.total_env_steps {
        let action = if step <= cfg.initial_random_steps {
            agent.random_action(&obs, rng)?
        } else {
            agent.act(&obs, ActMode::Explore, rng)?
        };
        let out = agent.execute(env, &action)?;
        let next = Arc::new(AgentObs::from_env(env));
        buffer.push(Transition {
            observation: obs,
            action,
            reward: out.reward,
            next_observation: next.clone(),
            terminal: out.success,
        });
        episode_reward += out.task_reward;
        summary.env_steps = step;

        if step > cfg.initial_random_steps && buffer.len() >= cfg.batch_size {
            for _ in 0..critic_credit.take(cfg.critic_updates_per_env_step) {
                let batch = buffer.sample(cfg.batch_size, rng)?;
                let s = agent.update_critics(&batch, rng)?;
                row_losses.add_critic(s);
                window_losses.add_critic(s);
                summary.critic_updates += 1;
            }
            for _ in 0..actor_credit.take(cfg.actor_updates_per_env_step) {
                let batch = buffer.sample(cfg.batch_size, rng)?;
                let l = agent.update_actor(&batch)?;
                row_losses.add_actor(l);
                window_losses.add_actor(l);
                summary.actor_updates += 1;
            }
            for _ in 0..target_credit.take(cfg.target_updates_per_env_step) {
                agent.update_targets()?;
                summary.target_updates += 1;
            }
        }

        if step % LOSS_WINDOW_STEPS == 0 {
            let (a, c, q) = window_losses.means();
            sink.on_losses(&LossRecord {
                step,
                critic_updates: window_losses.critic.2,
                actor_updates: window_losses.actor.1,
                critic_loss: c,
                actor_loss: a,
                mean_q: q,
            })?;
            window_losses = LossWindow::default();
        }

        if out.done {
            summary.episodes += 1;
            if recent.len() == ROLLING_EPISODES {
                recent.pop_front();
            }
            recent.push_back((out.success, episode_reward));
            let n = recent.len() as f64;
            let (a, c, q) = row_losses.means();
            sink.on_metrics(&MetricsRecord {
                step,
                episode: summary.episodes,
                success_rate: recent.iter().filter(|r| r.0).count() as f64 / n,
                mean_episode_reward: recent.iter().map(|r| r.1).sum::<f64>() / n,
                actor_loss: a,
                critic_loss: c,
                mean_q: q,
                buffer_size: buffer.len(),
                wall_time_s: if options.wall_time { started.elapsed().as_secs_f64() } else { 0.0 },
            })?;
            row_losses = LossWindow::default();
            episode_reward = 0.0;
            env.reset();
            agent.on_reset(env);
            obs = Arc::new(AgentObs::from_env(env));
        } else {
            obs = next;
        }

        if let Some(ev) = &options.eval {
            if ev.every_steps > 0 && (step % ev.every_steps == 0 || step == cfg.total_env_steps) {
                let result = evaluate(&*agent, env.config(), env.variant(), ev.episodes, ev.seed, ev.threads)?;
                let flow = sink.on_eval(step, &result, agent)?;
                summary.last_eval = Some(result);
                if flow.is_break() {
                    summary.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(summary)
}

fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// One greedy episode on a fresh environment seeded from `(seed, index)`.
pub fn run_episode<L: Learner + ?Sized>(
    agent: &L,
    config: &EnvConfig,
    variant: &TaskVariant,
    seed: u64,
    index: usize,
    mut on_step: impl FnMut(&AgentObs, &AgentAction, &StepOutcome),
) -> Result<EpisodeSummary> {
    let s = episode_seed(seed, index);
    let mut env = PlanarPushEnv::new(config.clone(), *variant, s)?;
    agent.on_reset(&mut env);
    let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut total = 0.0;
    let mut length = 0;
    loop {
        let obs = AgentObs::from_env(&env);
        let action = agent.act(&obs, ActMode::Greedy, &mut rng)?;
        let out = agent.execute(&mut env, &action)?;
        on_step(&obs, &action, &out);
        total += out.task_reward;
        length += 1;
        if out.done {
            return Ok(EpisodeSummary {
                success: out.success,
                length,
                total_reward: total,
                final_flow: out.mean_flow,
            });
        }
    }
}

/// Greedy evaluation over `episodes` independent episodes. Results do not
/// depend on `threads`.
pub fn evaluate<L: Learner + Sync + ?Sized>(
    agent: &L,
    config: &EnvConfig,
    variant: &TaskVariant,
    episodes: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalResult> {
    let threads = threads.clamp(1, episodes.max(1));
    let mut slots: Vec<Option<Result<EpisodeSummary>>> = (0..episodes).map(|_| None).collect();
    if threads == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_episode(agent, config, variant, seed, i, |_, _, _| {}));
        }
    } else {
        let chunk = episodes.div_ceil(threads);
        std::thread::scope(|scope| {
            for (c, part) in slots.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    for (k, slot) in part.iter_mut().enumerate() {
                        *slot = Some(run_episode(agent, config, variant, seed, c * chunk + k, |_, _, _| {}));
                    }
                });
            }
        });
    }
    let eps = slots
        .into_iter()
        .map(|s| s.expect("every episode slot filled"))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_episodes(eps))
}

/// Thread count from `HACMAN_THREADS` (default 1).
pub fn threads_from_env() -> usize {
    std::env::var("HACMAN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
