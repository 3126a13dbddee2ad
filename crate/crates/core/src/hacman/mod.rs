//! Hybrid actor-critic agent over per-point action maps.
//!
//! The actor emits motion parameters for every observed point (the actor
//! map); the critic scores each point paired with its motion parameters (the
//! critic map). A temperature softmax of the critic map over object points is
//! both the exploration policy for the contact location and the weighting
//! used in the actor objective and the bootstrapped critic target.

pub mod features;
pub mod replay;
pub mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::ActionCommand;
use crate::error::{Error, NetError, Result};
use crate::netcore::{
    adam_update, pointnet_backward, pointnet_forward, Activation, AdamState, HeadInput, Matrix, ParameterStore,
    PointNetSpec, PointNetTape,
};
use crate::pointcloud::{PointCloud, Seg, Vec2};

pub use features::{AgentObs, InputMode, PreparedBatch, StateObs};
pub use replay::{AgentAction, ReplayBuffer, Transition};
pub use train::{
    evaluate, execute_contact, run_episode, threads_from_env, train, ActMode, EpisodeSummary, EvalResult, EvalSettings, Learner,
    LoopOptions, LossRecord, MetricsRecord, NullSink, StepOutcome, TrainSink, TrainSummary,
};

/// Layer widths of every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: Vec<usize>,
    pub head: Vec<usize>,
    /// Positions and flows are multiplied by this before entering a network.
    pub input_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder: vec![128, 128, 128],
            head: vec![128, 128, 128],
            input_scale: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub discount: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub initial_random_steps: usize,
    pub critic_updates_per_env_step: f64,
    pub actor_updates_per_env_step: f64,
    pub target_updates_per_env_step: f64,
    pub target_clamp: (f64, f64),
    pub location_temperature: f64,
    pub polyak_tau: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub total_env_steps: usize,
    pub replay_capacity: usize,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            batch_size: 64,
            learning_rate: 1e-4,
            initial_random_steps: 10_000,
            critic_updates_per_env_step: 2.0,
            actor_updates_per_env_step: 0.5,
            target_updates_per_env_step: 0.5,
            target_clamp: (-20.0, 0.0),
            location_temperature: 0.1,
            polyak_tau: 0.005,
            exploration_noise: 0.1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            total_env_steps: 200_000,
            replay_capacity: 100_000,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("train.{key}"), msg));
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return bad("discount", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.location_temperature > 0.0) {
            return bad("location_temperature", "must be positive");
        }
        if !(self.target_clamp.0 <= self.target_clamp.1) {
            return bad("target_clamp", "bounds must be ordered");
        }
        if !(0.0..=1.0).contains(&self.polyak_tau) {
            return bad("polyak_tau", "must lie in [0, 1]");
        }
        for (k, v) in [
            ("critic_updates_per_env_step", self.critic_updates_per_env_step),
            ("actor_updates_per_env_step", self.actor_updates_per_env_step),
            ("target_updates_per_env_step", self.target_updates_per_env_step),
            ("exploration_noise", self.exploration_noise),
            ("target_noise", self.target_noise),
            ("target_noise_clip", self.target_noise_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(k, "must be non-negative");
            }
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity", "must hold at least one batch");
        }
        if self.net.encoder.is_empty() || self.net.head.is_empty() || self.net.encoder.iter().chain(&self.net.head).any(|&w| w == 0) {
            return bad("net", "layer widths must be positive and non-empty");
        }
        if !(self.net.input_scale > 0.0) {
            return bad("net.input_scale", "must be positive");
        }
        Ok(())
    }
}

/// How contact locations are weighted and sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocationMode {
    /// Temperature softmax over the critic map.
    Softmax,
    /// Uniform over object points, ignoring the critic.
    Uniform,
}

/// Single-point modifications of the full agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HacmanOptions {
    pub location: LocationMode,
    pub input: InputMode,
    /// `false` replaces the per-point actor map with one shared motion vector.
    pub actor_map: bool,
    pub discount_override: Option<f64>,
}

impl Default for HacmanOptions {
    fn default() -> Self {
        Self {
            location: LocationMode::Softmax,
            input: InputMode::Flow,
            actor_map: true,
            discount_override: None,
        }
    }
}

/// Per-point motion parameters, aligned with the observation's points.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorMap(pub Vec<Vec2>);

/// Per-point Q-values, aligned with the observation's points.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticMap(pub Vec<f64>);

/// Softmax of `values / beta` with max-subtraction.
pub fn softmax(values: &[f64], beta: f64) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| ((v - m) / beta).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Contact-location distribution over the whole cloud; background entries are exactly zero.
pub fn location_policy(critic_map: &CriticMap, cloud: &PointCloud, beta: f64) -> Result<Vec<f64>> {
    if critic_map.0.len() != cloud.len() {
        return Err(NetError::Shape(format!("critic map has {} entries for {} points", critic_map.0.len(), cloud.len())).into());
    }
    let idx: Vec<usize> = cloud.object_indices().collect();
    if idx.is_empty() {
        return Err(Error::NoObjectPoints);
    }
    let q: Vec<f64> = idx.iter().map(|&i| critic_map.0[i]).collect();
    let mut probs = vec![0.0; cloud.len()];
    for (&i, p) in idx.iter().zip(softmax(&q, beta)) {
        probs[i] = p;
    }
    Ok(probs)
}

/// Lowest index among the maxima of `values` restricted to `candidates`.
fn argmax_lowest(values: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        if best.is_none_or(|b| values[i] > values[b] || (values[i] == values[b] && i < b)) {
            best = Some(i);
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// `target ← (1 − τ)·target + τ·online` for every scalar.
pub fn polyak_update(target: &mut ParameterStore, online: &ParameterStore, tau: f64) -> Result<()> {
    target.check_same_layout(online)?;
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        t.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a = (1.0 - tau) * *a + tau * b);
    }
    Ok(())
}

/// Online networks, their target copies and optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub actor: ParameterStore,
    pub critic1: ParameterStore,
    pub critic2: ParameterStore,
    pub actor_target: ParameterStore,
    pub critic1_target: ParameterStore,
    pub critic2_target: ParameterStore,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
}

impl AgentParams {
    pub fn new(actor: ParameterStore, critic1: ParameterStore, critic2: ParameterStore) -> Self {
        Self {
            actor_opt: AdamState::new(&actor),
            critic1_opt: AdamState::new(&critic1),
            critic2_opt: AdamState::new(&critic2),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
        }
    }

    pub fn step_critics(&mut self, g1: &ParameterStore, g2: &ParameterStore, lr: f64) -> Result<()> {
        adam_update(&mut self.critic1, g1, lr, &mut self.critic1_opt)?;
        adam_update(&mut self.critic2, g2, lr, &mut self.critic2_opt)?;
        Ok(())
    }

    pub fn step_actor(&mut self, g: &ParameterStore, lr: f64) -> Result<()> {
        adam_update(&mut self.actor, g, lr, &mut self.actor_opt)?;
        Ok(())
    }

    /// Polyak-averages every target copy toward its online network.
    pub fn track_targets(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        polyak_update(&mut self.critic1_target, &self.critic1, tau)?;
        polyak_update(&mut self.critic2_target, &self.critic2, tau)?;
        Ok(())
    }

    pub fn stores(&self) -> [(&'static str, &ParameterStore); 6] {
        [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("actor_target", &self.actor_target),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
        ]
    }
}

/// Gaussian smoothing noise for target actions, one row per next-state object point.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNoise(pub Matrix);

/// Scalar loss with its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub mean_q: f64,
    pub grad: ParameterStore,
    /// Distance from the nearest relu or max-pool kink (infinite when not computed).
    pub margin: f64,
}

/// `mean (q − y)²`, `mean q` and `d loss / d q`.
pub fn squared_residuals(q: &[f64], targets: &[f64]) -> (f64, f64, Matrix) {
    let n = q.len() as f64;
    let mut loss = 0.0;
    let mut mean_q = 0.0;
    let mut d = Matrix::zeros(q.len(), 1);
    for (i, (&qi, &yi)) in q.iter().zip(targets).enumerate() {
        let r = qi - yi;
        loss += r * r / n;
        mean_q += qi / n;
        d.data[i] = 2.0 * r / n;
    }
    (loss, mean_q, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticStats {
    pub loss: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HacmanAgent {
    pub config: TrainConfig,
    pub options: HacmanOptions,
    pub actor_spec: PointNetSpec,
    pub critic_spec: PointNetSpec,
    pub params: AgentParams,
}

impl HacmanAgent {
    pub fn new(config: TrainConfig, options: HacmanOptions, rng: &mut impl Rng) -> Self {
        let input = options.input.width();
        let net = &config.net;
        let mut actor_head = net.head.clone();
        actor_head.push(2);
        let mut critic_head = net.head.clone();
        critic_head.push(1);
        let actor_input = if options.actor_map { HeadInput::PerPoint } else { HeadInput::Pooled };
        let actor_spec = PointNetSpec::new(input, &net.encoder, &actor_head, actor_input, 0, Activation::Tanh);
        let critic_spec = PointNetSpec::new(input, &net.encoder, &critic_head, HeadInput::PerPoint, 2, Activation::None);
        let actor = actor_spec.init(rng);
        let critic1 = critic_spec.init(rng);
        let critic2 = critic_spec.init(rng);
        Self {
            config,
            options,
            actor_spec,
            critic_spec,
            params: AgentParams::new(actor, critic1, critic2),
        }
    }

    pub fn discount(&self) -> f64 {
        self.options.discount_override.unwrap_or(self.config.discount)
    }

    fn prepare(&self, obs: &[&AgentObs]) -> PreparedBatch {
        PreparedBatch::new(obs, self.options.input, self.config.net.input_scale)
    }

    /// Actor outputs for the given global rows of `prep` (one row per entry).
    fn actor_rows(&self, store: &ParameterStore, prep: &PreparedBatch, rows: &[usize]) -> Result<(Matrix, PointNetTape)> {
        match self.actor_spec.head_input {
            HeadInput::PerPoint => {
                let tape = pointnet_forward(&self.actor_spec, store, &prep.batch, rows, None)?;
                Ok((tape.output().clone(), tape))
            }
            HeadInput::Pooled => {
                let clouds: Vec<usize> = (0..prep.batch.n_clouds()).collect();
                let tape = pointnet_forward(&self.actor_spec, store, &prep.batch, &clouds, None)?;
                let out = tape.output();
                let mut m = Matrix::zeros(rows.len(), 2);
                for (k, &r) in rows.iter().enumerate() {
                    m.row_mut(k).copy_from_slice(out.row(prep.batch.cloud_of_row(r)));
                }
                Ok((m, tape))
            }
        }
    }

    fn actor_map_with(&self, store: &ParameterStore, obs: &AgentObs) -> Result<ActorMap> {
        let prep = self.prepare(&[obs]);
        let rows: Vec<usize> = (0..obs.cloud.len()).collect();
        let (m, _) = self.actor_rows(store, &prep, &rows)?;
        Ok(ActorMap((0..m.rows).map(|r| Vec2::new(m.get(r, 0), m.get(r, 1))).collect()))
    }

    fn critic_map_with(&self, store: &ParameterStore, obs: &AgentObs, actor_map: &ActorMap) -> Result<CriticMap> {
        if actor_map.0.len() != obs.cloud.len() {
            return Err(NetError::Shape(format!(
                "actor map has {} entries for {} points",
                actor_map.0.len(),
                obs.cloud.len()
            ))
            .into());
        }
        let prep = self.prepare(&[obs]);
        let rows: Vec<usize> = (0..obs.cloud.len()).collect();
        let extra = Matrix {
            rows: rows.len(),
            cols: 2,
            data: actor_map.0.iter().flat_map(|a| [a.x, a.y]).collect(),
        };
        let tape = pointnet_forward(&self.critic_spec, store, &prep.batch, &rows, Some(&extra))?;
        Ok(CriticMap(tape.output().data.clone()))
    }

    pub fn actor_map_forward(&self, obs: &AgentObs) -> Result<ActorMap> {
        self.actor_map_with(&self.params.actor, obs)
    }

    /// Critic-1 map for the given actor map.
    pub fn critic_map_forward(&self, obs: &AgentObs, actor_map: &ActorMap) -> Result<CriticMap> {
        self.critic_map_with(&self.params.critic1, obs, actor_map)
    }

    pub fn critic2_map_forward(&self, obs: &AgentObs, actor_map: &ActorMap) -> Result<CriticMap> {
        self.critic_map_with(&self.params.critic2, obs, actor_map)
    }

    /// Location distribution under the agent's location mode.
    pub fn location_probs(&self, critic_map: &CriticMap, cloud: &PointCloud) -> Result<Vec<f64>> {
        match self.options.location {
            LocationMode::Softmax => location_policy(critic_map, cloud, self.config.location_temperature),
            LocationMode::Uniform => {
                let n = cloud.n_object();
                if n == 0 {
                    return Err(Error::NoObjectPoints);
                }
                Ok(cloud
                    .seg()
                    .iter()
                    .map(|s| if *s == Seg::Object { 1.0 / n as f64 } else { 0.0 })
                    .collect())
            }
        }
    }

    /// Weights over one cloud's object points (same order as `q`).
    fn object_weights(&self, q: &[f64]) -> Vec<f64> {
        match self.options.location {
            LocationMode::Softmax => softmax(q, self.config.location_temperature),
            LocationMode::Uniform => vec![1.0 / q.len() as f64; q.len()],
        }
    }

    pub fn select_action(&self, obs: &AgentObs, mode: ActMode, rng: &mut impl Rng) -> Result<ActionCommand> {
        let actor_map = self.actor_map_forward(obs)?;
        let critic_map = self.critic_map_forward(obs, &actor_map)?;
        let index = match mode {
            ActMode::Greedy => match self.options.location {
                LocationMode::Softmax => argmax_lowest(&critic_map.0, obs.cloud.object_indices()),
                LocationMode::Uniform => {
                    let probs = self.location_probs(&critic_map, &obs.cloud)?;
                    Some(sample_categorical(&probs, rng))
                }
            }
            .ok_or(Error::NoObjectPoints)?,
            ActMode::Explore => {
                let probs = self.location_probs(&critic_map, &obs.cloud)?;
                sample_categorical(&probs, rng)
            }
        };
        let mut motion = actor_map.0[index];
        if mode == ActMode::Explore && self.config.exploration_noise > 0.0 {
            let noise = Normal::new(0.0, self.config.exploration_noise).expect("valid sigma");
            motion = Vec2::new(
                clip_unit(motion.x + noise.sample(rng)),
                clip_unit(motion.y + noise.sample(rng)),
            );
        }
        Ok(ActionCommand {
            contact_index: index,
            motion_params: motion,
        })
    }

    pub fn random_action(obs: &AgentObs, rng: &mut impl Rng) -> Result<ActionCommand> {
        let idx: Vec<usize> = obs.cloud.object_indices().collect();
        if idx.is_empty() {
            return Err(Error::NoObjectPoints);
        }
        Ok(ActionCommand {
            contact_index: idx[rng.random_range(0..idx.len())],
            motion_params: Vec2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)),
        })
    }

    /// Clipped Gaussian noise for every object point of every next observation.
    pub fn sample_target_noise(&self, batch: &[&Transition], rng: &mut impl Rng) -> TargetNoise {
        let rows: usize = batch.iter().map(|t| t.next_observation.cloud.n_object()).sum();
        let mut m = Matrix::zeros(rows, 2);
        if self.config.target_noise > 0.0 {
            let noise = Normal::new(0.0, self.config.target_noise).expect("valid sigma");
            let c = self.config.target_noise_clip;
            m.data.iter_mut().for_each(|v| *v = noise.sample(rng).clamp(-c, c));
        }
        TargetNoise(m)
    }

    /// Bootstrapped targets: `clamp(r + γ(1 − done)·Σ_i π_loc(x_i)·min(Q'₁, Q'₂)_i)`
    /// with the expectation taken exactly over the next state's object points.
    pub fn critic_targets(&self, batch: &[&Transition], noise: &TargetNoise) -> Result<Vec<f64>> {
        Ok(self.critic_targets_detailed(batch, noise)?.0)
    }

    /// Also returns the unclamped targets and the per-point min-critic values.
    pub fn critic_targets_detailed(&self, batch: &[&Transition], noise: &TargetNoise) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Ok((vec![], vec![], vec![]));
        }
        let next: Vec<&AgentObs> = batch.iter().map(|t| t.next_observation.as_ref()).collect();
        let prep = self.prepare(&next);
        let rows = prep.flat_object_rows();
        if noise.0.rows != rows.len() {
            return Err(NetError::Shape(format!("noise has {} rows for {} object points", noise.0.rows, rows.len())).into());
        }
        let (mut actions, _) = self.actor_rows(&self.params.actor_target, &prep, &rows)?;
        for (a, n) in actions.data.iter_mut().zip(&noise.0.data) {
            *a = clip_unit(*a + n);
        }
        let q1 = pointnet_forward(&self.critic_spec, &self.params.critic1_target, &prep.batch, &rows, Some(&actions))?;
        let q2 = pointnet_forward(&self.critic_spec, &self.params.critic2_target, &prep.batch, &rows, Some(&actions))?;
        let qmin: Vec<f64> = q1.output().data.iter().zip(&q2.output().data).map(|(a, b)| a.min(*b)).collect();
        let gamma = self.discount();
        let (lo, hi) = self.config.target_clamp;
        let mut targets = Vec::with_capacity(batch.len());
        let mut raw = Vec::with_capacity(batch.len());
        let mut maps = Vec::with_capacity(batch.len());
        let mut start = 0;
        for (t, obj) in batch.iter().zip(&prep.object_rows) {
            let q = &qmin[start..start + obj.len()];
            start += obj.len();
            let w = self.object_weights(q);
            let expectation: f64 = w.iter().zip(q).map(|(p, v)| p * v).sum();
            let mask = if t.terminal { 0.0 } else { 1.0 };
            let y = t.reward + gamma * mask * expectation;
            raw.push(y);
            targets.push(y.clamp(lo, hi));
            maps.push(q.to_vec());
        }
        Ok((targets, raw, maps))
    }

    fn contact_batch(&self, batch: &[&Transition]) -> Result<(PreparedBatch, Vec<usize>, Matrix)> {
        let obs: Vec<&AgentObs> = batch.iter().map(|t| t.observation.as_ref()).collect();
        let prep = self.prepare(&obs);
        let mut rows = Vec::with_capacity(batch.len());
        let mut actions = Matrix::zeros(batch.len(), 2);
        for (c, t) in batch.iter().enumerate() {
            let AgentAction::Contact(a) = t.action else {
                return Err(NetError::Shape("transition does not carry a contact action".into()).into());
            };
            if a.contact_index >= t.observation.cloud.len() {
                return Err(NetError::Shape(format!("contact index {} out of range", a.contact_index)).into());
            }
            rows.push(prep.cloud_start(c) + a.contact_index);
            actions.row_mut(c).copy_from_slice(&[a.motion_params.x, a.motion_params.y]);
        }
        Ok((prep, rows, actions))
    }

    /// Mean squared Bellman residual of one critic at the stored contact
    /// points, with its gradient.
    pub fn critic_loss_eval(&self, critic: &ParameterStore, batch: &[&Transition], targets: &[f64], margin: bool) -> Result<LossEval> {
        let (prep, rows, actions) = self.contact_batch(batch)?;
        let tape = pointnet_forward(&self.critic_spec, critic, &prep.batch, &rows, Some(&actions))?;
        let (loss, mean_q, d) = squared_residuals(&tape.output().data, targets);
        let mut grad = critic.zeros_like();
        pointnet_backward(&self.critic_spec, critic, &tape, &d, Some(&mut grad))?;
        let margin = if margin { tape.kink_margin(&self.critic_spec, critic)? } else { f64::INFINITY };
        Ok(LossEval { loss, mean_q, grad, margin })
    }

    /// Loss summed over both critics, with gradients for each.
    pub fn critic_loss(&self, batch: &[&Transition], targets: &[f64]) -> Result<(CriticStats, ParameterStore, ParameterStore)> {
        let a = self.critic_loss_eval(&self.params.critic1, batch, targets, false)?;
        let b = self.critic_loss_eval(&self.params.critic2, batch, targets, false)?;
        let stats = CriticStats { loss: a.loss + b.loss, mean_q: 0.5 * (a.mean_q + b.mean_q) };
        Ok((stats, a.grad, b.grad))
    }

    pub fn update_critics(&mut self, batch: &[&Transition], rng: &mut impl Rng) -> Result<CriticStats> {
        let noise = self.sample_target_noise(batch, rng);
        let targets = self.critic_targets(batch, &noise)?;
        let (stats, g1, g2) = self.critic_loss(batch, &targets)?;
        self.params.step_critics(&g1, &g2, self.config.learning_rate)?;
        Ok(stats)
    }

    /// Actor objective `mean_b Σ_i π_loc(x_i)·(−Q₁(f_i, a_i))` with the location
    /// weights held constant, and its gradient with respect to the actor.
    pub fn actor_loss(&self, batch: &[&Transition]) -> Result<(f64, ParameterStore)> {
        let (e, _) = self.actor_loss_eval(&self.params.actor, batch, None, false)?;
        Ok((e.loss, e.grad))
    }

    /// Actor objective for an explicit actor. `weights` (one vector per
    /// transition over its object points) overrides the location weights,
    /// which are otherwise computed from the critic map; the weights used are returned.
    pub fn actor_loss_eval(
        &self,
        actor: &ParameterStore,
        batch: &[&Transition],
        weights: Option<&[Vec<f64>]>,
        margin: bool,
    ) -> Result<(LossEval, Vec<Vec<f64>>)> {
        let obs: Vec<&AgentObs> = batch.iter().map(|t| t.observation.as_ref()).collect();
        let prep = self.prepare(&obs);
        let rows = prep.flat_object_rows();
        let (actions, actor_tape) = self.actor_rows(actor, &prep, &rows)?;
        let critic = &self.params.critic1;
        let q_tape = pointnet_forward(&self.critic_spec, critic, &prep.batch, &rows, Some(&actions))?;
        let q = &q_tape.output().data;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        let mut d_q = Matrix::zeros(q.len(), 1);
        let mut used = Vec::with_capacity(batch.len());
        let mut start = 0;
        for (c, obj) in prep.object_rows.iter().enumerate() {
            let qs = &q[start..start + obj.len()];
            let w = match weights {
                Some(ws) => {
                    if ws.get(c).map(Vec::len) != Some(obj.len()) {
                        return Err(NetError::Shape("location weights do not match object points".into()).into());
                    }
                    ws[c].clone()
                }
                None => self.object_weights(qs),
            };
            for (k, (p, v)) in w.iter().zip(qs).enumerate() {
                loss -= p * v / n;
                mean_q += p * v / n;
                d_q.data[start + k] = -p / n;
            }
            used.push(w);
            start += obj.len();
        }
        let d_actions = pointnet_backward(&self.critic_spec, critic, &q_tape, &d_q, None)?;
        let d_out = match self.actor_spec.head_input {
            HeadInput::PerPoint => d_actions,
            HeadInput::Pooled => {
                let mut m = Matrix::zeros(prep.batch.n_clouds(), 2);
                for (k, &r) in rows.iter().enumerate() {
                    let c = prep.batch.cloud_of_row(r);
                    m.row_mut(c).iter_mut().zip(d_actions.row(k)).for_each(|(a, b)| *a += b);
                }
                m
            }
        };
        let mut grad = actor.zeros_like();
        pointnet_backward(&self.actor_spec, actor, &actor_tape, &d_out, Some(&mut grad))?;
        let margin = if margin {
            actor_tape
                .kink_margin(&self.actor_spec, actor)?
                .min(q_tape.kink_margin(&self.critic_spec, critic)?)
        } else {
            f64::INFINITY
        };
        Ok((LossEval { loss, mean_q, grad, margin }, used))
    }

    pub fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (loss, g) = self.actor_loss(batch)?;
        self.params.step_actor(&g, self.config.learning_rate)?;
        Ok(loss)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        self.params.track_targets(self.config.polyak_tau)
    }
}
