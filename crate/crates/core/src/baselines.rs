//! Alternative action representations and single-change ablations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::PlanarPushEnv;
use crate::error::{Error, NetError, Result};
use crate::hacman::{
    execute_contact, ActMode, AgentAction, AgentObs, AgentParams, CriticStats, HacmanAgent, LossEval,
    HacmanOptions, InputMode, Learner, LocationMode, squared_residuals, StepOutcome, TrainConfig, Transition,
};
use crate::netcore::{
    pointnet_backward, pointnet_forward, Activation, CloudBatch, HeadInput, Matrix, ParameterStore, PointNetSpec,
};
use crate::pointcloud::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    RegressContactLocation,
    NoContactLocation,
    RandomLocation,
    Greedy,
    NoFlowGoalPc,
    NoFlowGoalPose,
    NoActorMap,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::RegressContactLocation,
        BaselineKind::NoContactLocation,
        BaselineKind::RandomLocation,
        BaselineKind::Greedy,
        BaselineKind::NoFlowGoalPc,
        BaselineKind::NoFlowGoalPose,
        BaselineKind::NoActorMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::RegressContactLocation => "regress_contact_location",
            BaselineKind::NoContactLocation => "no_contact_location",
            BaselineKind::RandomLocation => "random_location",
            BaselineKind::Greedy => "greedy",
            BaselineKind::NoFlowGoalPc => "no_flow_goal_pc",
            BaselineKind::NoFlowGoalPose => "no_flow_goal_pose",
            BaselineKind::NoActorMap => "no_actor_map",
        }
    }

    /// Kinds that replace the per-point action representation with a global one.
    pub fn is_global(self) -> bool {
        matches!(self, BaselineKind::RegressContactLocation | BaselineKind::NoContactLocation)
    }
}

/// Inputs of the global-action baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationMode {
    PointCloud,
    State,
}

impl ObservationMode {
    pub fn name(self) -> &'static str {
        match self {
            ObservationMode::PointCloud => "point_cloud",
            ObservationMode::State => "state",
        }
    }
}

impl FromStr for ObservationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "point_cloud" => Ok(ObservationMode::PointCloud),
            "state" => Ok(ObservationMode::State),
            _ => Err(format!("unknown observation mode `{s}` (expected point_cloud or state)")),
        }
    }
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The full agent or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    Hacman,
    Baseline(BaselineKind),
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Hacman => "hacman",
            AgentKind::Baseline(b) => b.name(),
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "hacman" {
            return Ok(AgentKind::Hacman);
        }
        BaselineKind::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .map(AgentKind::Baseline)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `−λ(d − 0.05)` beyond 0.05, else 0.
pub fn distance_penalty(d_min: f64, lambda: f64) -> f64 {
    if d_min > 0.05 {
        -lambda * (d_min - 0.05)
    } else {
        0.0
    }
}

/// Default penalty weight per observation mode.
pub fn default_lambda(mode: ObservationMode) -> f64 {
    match mode {
        ObservationMode::PointCloud => 1.0,
        ObservationMode::State => 5.0,
    }
}

/// HACMan agent with exactly one modification; global baselines are rejected.
pub fn make_ablation(kind: AgentKind, base: &TrainConfig, rng: &mut impl Rng) -> Result<HacmanAgent> {
    let mut o = HacmanOptions::default();
    match kind {
        AgentKind::Hacman => {}
        AgentKind::Baseline(BaselineKind::RandomLocation) => o.location = LocationMode::Uniform,
        AgentKind::Baseline(BaselineKind::Greedy) => o.discount_override = Some(0.0),
        AgentKind::Baseline(BaselineKind::NoFlowGoalPc) => o.input = InputMode::GoalPointCloud,
        AgentKind::Baseline(BaselineKind::NoFlowGoalPose) => o.input = InputMode::GoalPose,
        AgentKind::Baseline(BaselineKind::NoActorMap) => o.actor_map = false,
        AgentKind::Baseline(b) => return Err(Error::UnknownKind(format!("{} is not a HACMan ablation", b.name()))),
    }
    Ok(HacmanAgent::new(base.clone(), o, rng))
}

/// Which global baseline a [`Td3Agent`] implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalAction {
    /// 4 outputs: raw contact location followed by motion parameters.
    RegressContact,
    /// 2 outputs: gripper delta from its previous position.
    NoContact,
}

impl GlobalAction {
    pub fn dim(self) -> usize {
        match self {
            GlobalAction::RegressContact => 4,
            GlobalAction::NoContact => 2,
        }
    }

    fn uses_gripper(self) -> bool {
        self == GlobalAction::NoContact
    }
}

/// Deterministic-policy twin-critic agent with one global action per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Agent {
    pub config: TrainConfig,
    pub action: GlobalAction,
    pub observation: ObservationMode,
    pub lambda: f64,
    pub actor_spec: PointNetSpec,
    pub critic_spec: PointNetSpec,
    pub params: AgentParams,
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

impl Td3Agent {
    pub fn new(config: TrainConfig, action: GlobalAction, observation: ObservationMode, rng: &mut impl Rng) -> Self {
        let net = &config.net;
        let d = action.dim();
        let (input, side) = match observation {
            ObservationMode::PointCloud => (InputMode::Flow.width(), if action.uses_gripper() { 2 } else { 0 }),
            // The state vector is fed as a single-point cloud, so encoder plus head form a plain MLP.
            ObservationMode::State => (6 + if action.uses_gripper() { 2 } else { 0 }, 0),
        };
        let mut actor_head = net.head.clone();
        actor_head.push(d);
        let mut critic_head = net.head.clone();
        critic_head.push(1);
        let actor_spec = PointNetSpec::new(input, &net.encoder, &actor_head, HeadInput::Pooled, side, Activation::Tanh);
        let critic_spec = PointNetSpec::new(input, &net.encoder, &critic_head, HeadInput::Pooled, d + side, Activation::None);
        let actor = actor_spec.init(rng);
        let critic1 = critic_spec.init(rng);
        let critic2 = critic_spec.init(rng);
        Self {
            lambda: default_lambda(observation),
            config,
            action,
            observation,
            actor_spec,
            critic_spec,
            params: AgentParams::new(actor, critic1, critic2),
        }
    }

    pub fn kind(&self) -> BaselineKind {
        match self.action {
            GlobalAction::RegressContact => BaselineKind::RegressContactLocation,
            GlobalAction::NoContact => BaselineKind::NoContactLocation,
        }
    }

    fn side_width(&self) -> usize {
        self.actor_spec.extra
    }

    /// Encoder rows plus the per-cloud side input (scaled gripper position).
    fn prepare(&self, obs: &[&AgentObs]) -> (CloudBatch, Matrix) {
        let scale = self.config.net.input_scale;
        let mut data = Vec::new();
        let mut offsets = vec![0];
        let side = self.side_width();
        let mut extra = Matrix::zeros(obs.len(), side);
        for (c, o) in obs.iter().enumerate() {
            match self.observation {
                ObservationMode::PointCloud => InputMode::Flow.write_rows(o, scale, &mut data),
                ObservationMode::State => data.extend(o.state.to_vec(self.action.uses_gripper(), scale)),
            }
            let rows = match self.observation {
                ObservationMode::PointCloud => o.cloud.len(),
                ObservationMode::State => 1,
            };
            offsets.push(offsets[c] + rows);
            if side > 0 {
                extra.row_mut(c).copy_from_slice(&[o.state.gripper.x * scale, o.state.gripper.y * scale]);
            }
        }
        let width = self.actor_spec.encoder.per_point.input;
        let rows = *offsets.last().unwrap();
        (
            CloudBatch {
                features: Matrix { rows, cols: width, data },
                offsets,
            },
            extra,
        )
    }

    fn side(&self, extra: &Matrix) -> Option<Matrix> {
        (self.side_width() > 0).then(|| extra.clone())
    }

    fn critic_extra(&self, actions: &Matrix, side: &Matrix) -> Matrix {
        let d = self.action.dim();
        let w = d + self.side_width();
        let mut m = Matrix::zeros(actions.rows, w);
        for r in 0..actions.rows {
            m.row_mut(r)[..d].copy_from_slice(actions.row(r));
            m.row_mut(r)[d..].copy_from_slice(side.row(r));
        }
        m
    }

    /// Raw actor output for one observation.
    pub fn actor_forward(&self, obs: &AgentObs) -> Result<Vec<f64>> {
        let (batch, side) = self.prepare(&[obs]);
        let tape = pointnet_forward(&self.actor_spec, &self.params.actor, &batch, &[0], self.side(&side).as_ref())?;
        Ok(tape.output().data.clone())
    }

    pub fn critic_forward(&self, obs: &AgentObs, action: &[f64]) -> Result<f64> {
        let (batch, side) = self.prepare(&[obs]);
        let a = Matrix::from_vec(1, self.action.dim(), action.to_vec())?;
        let x = self.critic_extra(&a, &side);
        let tape = pointnet_forward(&self.critic_spec, &self.params.critic1, &batch, &[0], Some(&x))?;
        Ok(tape.output().data[0])
    }

    fn to_action(&self, v: &[f64]) -> AgentAction {
        match self.action {
            GlobalAction::RegressContact => AgentAction::Regress {
                location: Vec2::new(v[0], v[1]),
                motion: Vec2::new(v[2], v[3]),
            },
            GlobalAction::NoContact => AgentAction::Delta(Vec2::new(v[0], v[1])),
        }
    }

    fn stored_action(&self, a: &AgentAction) -> Result<Vec<f64>> {
        let v = a.continuous();
        let ok = matches!(
            (self.action, a),
            (GlobalAction::RegressContact, AgentAction::Regress { .. }) | (GlobalAction::NoContact, AgentAction::Delta(_))
        );
        if !ok {
            return Err(NetError::Shape("transition action does not match this agent".into()).into());
        }
        Ok(v)
    }

    pub fn select(&self, obs: &AgentObs, mode: ActMode, rng: &mut impl Rng) -> Result<AgentAction> {
        let mut v = self.actor_forward(obs)?;
        if mode == ActMode::Explore && self.config.exploration_noise > 0.0 {
            let n = Normal::new(0.0, self.config.exploration_noise).expect("valid sigma");
            v.iter_mut().for_each(|x| *x = clip_unit(*x + n.sample(rng)));
        }
        Ok(self.to_action(&v))
    }

    pub fn random(&self, rng: &mut impl Rng) -> AgentAction {
        let v: Vec<f64> = (0..self.action.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        self.to_action(&v)
    }

    /// `clamp(r + γ(1 − done)·min(Q'₁, Q'₂)(s', π'(s') + ε))`.
    pub fn critic_targets(&self, batch: &[&Transition], noise: &Matrix) -> Result<Vec<f64>> {
        let next: Vec<&AgentObs> = batch.iter().map(|t| t.next_observation.as_ref()).collect();
        let (cb, side) = self.prepare(&next);
        let clouds: Vec<usize> = (0..batch.len()).collect();
        let tape = pointnet_forward(&self.actor_spec, &self.params.actor_target, &cb, &clouds, self.side(&side).as_ref())?;
        let mut a = tape.output().clone();
        if noise.rows != a.rows || noise.cols != a.cols {
            return Err(NetError::Shape("target noise shape mismatch".into()).into());
        }
        a.data.iter_mut().zip(&noise.data).for_each(|(x, n)| *x = clip_unit(*x + n));
        let x = self.critic_extra(&a, &side);
        let q1 = pointnet_forward(&self.critic_spec, &self.params.critic1_target, &cb, &clouds, Some(&x))?;
        let q2 = pointnet_forward(&self.critic_spec, &self.params.critic2_target, &cb, &clouds, Some(&x))?;
        let (lo, hi) = self.config.target_clamp;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let q = q1.output().data[i].min(q2.output().data[i]);
                let mask = if t.terminal { 0.0 } else { 1.0 };
                (t.reward + self.config.discount * mask * q).clamp(lo, hi)
            })
            .collect())
    }

    pub fn sample_target_noise(&self, n: usize, rng: &mut impl Rng) -> Matrix {
        let mut m = Matrix::zeros(n, self.action.dim());
        if self.config.target_noise > 0.0 {
            let dist = Normal::new(0.0, self.config.target_noise).expect("valid sigma");
            let c = self.config.target_noise_clip;
            m.data.iter_mut().for_each(|v| *v = dist.sample(rng).clamp(-c, c));
        }
        m
    }

    pub fn critic_loss_eval(&self, critic: &ParameterStore, batch: &[&Transition], targets: &[f64], margin: bool) -> Result<LossEval> {
        let obs: Vec<&AgentObs> = batch.iter().map(|t| t.observation.as_ref()).collect();
        let (cb, side) = self.prepare(&obs);
        let mut a = Matrix::zeros(batch.len(), self.action.dim());
        for (i, t) in batch.iter().enumerate() {
            a.row_mut(i).copy_from_slice(&self.stored_action(&t.action)?);
        }
        let x = self.critic_extra(&a, &side);
        let clouds: Vec<usize> = (0..batch.len()).collect();
        let tape = pointnet_forward(&self.critic_spec, critic, &cb, &clouds, Some(&x))?;
        let (loss, mean_q, d) = squared_residuals(&tape.output().data, targets);
        let mut grad = critic.zeros_like();
        pointnet_backward(&self.critic_spec, critic, &tape, &d, Some(&mut grad))?;
        let margin = if margin { tape.kink_margin(&self.critic_spec, critic)? } else { f64::INFINITY };
        Ok(LossEval { loss, mean_q, grad, margin })
    }

    pub fn critic_loss(&self, batch: &[&Transition], targets: &[f64]) -> Result<(CriticStats, ParameterStore, ParameterStore)> {
        let a = self.critic_loss_eval(&self.params.critic1, batch, targets, false)?;
        let b = self.critic_loss_eval(&self.params.critic2, batch, targets, false)?;
        let stats = CriticStats { loss: a.loss + b.loss, mean_q: 0.5 * (a.mean_q + b.mean_q) };
        Ok((stats, a.grad, b.grad))
    }

    /// `−mean Q₁(s, π(s))` and its gradient with respect to `actor`.
    pub fn actor_loss_eval(&self, actor: &ParameterStore, batch: &[&Transition], margin: bool) -> Result<LossEval> {
        let obs: Vec<&AgentObs> = batch.iter().map(|t| t.observation.as_ref()).collect();
        let (cb, side) = self.prepare(&obs);
        let clouds: Vec<usize> = (0..batch.len()).collect();
        let side_in = self.side(&side);
        let a_tape = pointnet_forward(&self.actor_spec, actor, &cb, &clouds, side_in.as_ref())?;
        let x = self.critic_extra(a_tape.output(), &side);
        let critic = &self.params.critic1;
        let q_tape = pointnet_forward(&self.critic_spec, critic, &cb, &clouds, Some(&x))?;
        let n = batch.len() as f64;
        let mean_q = q_tape.output().data.iter().sum::<f64>() / n;
        let dq = Matrix { rows: batch.len(), cols: 1, data: vec![-1.0 / n; batch.len()] };
        let dx = pointnet_backward(&self.critic_spec, critic, &q_tape, &dq, None)?;
        let d = self.action.dim();
        let mut da = Matrix::zeros(batch.len(), d);
        for r in 0..batch.len() {
            da.row_mut(r).copy_from_slice(&dx.row(r)[..d]);
        }
        let mut grad = actor.zeros_like();
        pointnet_backward(&self.actor_spec, actor, &a_tape, &da, Some(&mut grad))?;
        let margin = if margin {
            a_tape
                .kink_margin(&self.actor_spec, actor)?
                .min(q_tape.kink_margin(&self.critic_spec, critic)?)
        } else {
            f64::INFINITY
        };
        Ok(LossEval { loss: -mean_q, mean_q, grad, margin })
    }

    /// Object-boundary distance of the persistent gripper, zero when touching or inside.
    pub fn gripper_distance(env: &PlanarPushEnv) -> f64 {
        let s = env.state();
        s.shape.closest_boundary(&s.pose, s.gripper).signed_distance.max(0.0)
    }
}

impl Learner for Td3Agent {
    fn train_config(&self) -> &TrainConfig {
        &self.config
    }

    fn on_reset(&self, env: &mut PlanarPushEnv) {
        if self.action == GlobalAction::NoContact {
            env.place_delta_gripper();
        }
    }

    fn act(&self, obs: &AgentObs, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        self.select(obs, mode, rng)
    }

    fn random_action(&self, _obs: &AgentObs, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        Ok(self.random(rng))
    }

    fn execute(&self, env: &mut PlanarPushEnv, action: &AgentAction) -> Result<StepOutcome> {
        let mut out = execute_contact(env, action)?;
        if self.action == GlobalAction::NoContact {
            out.reward += distance_penalty(Self::gripper_distance(env), self.lambda);
        }
        Ok(out)
    }

    fn update_critics(&mut self, batch: &[&Transition], rng: &mut ChaCha8Rng) -> Result<CriticStats> {
        let noise = self.sample_target_noise(batch.len(), rng);
        let y = self.critic_targets(batch, &noise)?;
        let (stats, g1, g2) = self.critic_loss(batch, &y)?;
        self.params.step_critics(&g1, &g2, self.config.learning_rate)?;
        Ok(stats)
    }

    fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64> {
        let e = self.actor_loss_eval(&self.params.actor, batch, false)?;
        self.params.step_actor(&e.grad, self.config.learning_rate)?;
        Ok(e.loss)
    }

    fn update_targets(&mut self) -> Result<()> {
        self.params.track_targets(self.config.polyak_tau)
    }
}

/// Any agent the harness can train, evaluate and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Agent {
    Hacman { kind: AgentKind, agent: HacmanAgent },
    Td3(Td3Agent),
}

impl Agent {
    pub fn new(kind: AgentKind, observation: ObservationMode, config: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(match kind {
            AgentKind::Baseline(BaselineKind::RegressContactLocation) => {
                Agent::Td3(Td3Agent::new(config.clone(), GlobalAction::RegressContact, observation, rng))
            }
            AgentKind::Baseline(BaselineKind::NoContactLocation) => {
                Agent::Td3(Td3Agent::new(config.clone(), GlobalAction::NoContact, observation, rng))
            }
            _ => {
                if observation != ObservationMode::PointCloud {
                    return Err(Error::config("agent.observation", format!("{kind} requires point_cloud")));
                }
                Agent::Hacman { kind, agent: make_ablation(kind, config, rng)? }
            }
        })
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Hacman { kind, .. } => *kind,
            Agent::Td3(t) => AgentKind::Baseline(t.kind()),
        }
    }

    pub fn params(&self) -> &AgentParams {
        match self {
            Agent::Hacman { agent, .. } => &agent.params,
            Agent::Td3(t) => &t.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut AgentParams {
        match self {
            Agent::Hacman { agent, .. } => &mut agent.params,
            Agent::Td3(t) => &mut t.params,
        }
    }

    pub fn as_hacman(&self) -> Option<&HacmanAgent> {
        match self {
            Agent::Hacman { agent, .. } => Some(agent),
            Agent::Td3(_) => None,
        }
    }
}

impl Learner for Agent {
    fn train_config(&self) -> &TrainConfig {
        match self {
            Agent::Hacman { agent, .. } => agent.train_config(),
            Agent::Td3(t) => t.train_config(),
        }
    }

    fn on_reset(&self, env: &mut PlanarPushEnv) {
        match self {
            Agent::Hacman { agent, .. } => agent.on_reset(env),
            Agent::Td3(t) => t.on_reset(env),
        }
    }

    fn act(&self, obs: &AgentObs, mode: ActMode, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        match self {
            Agent::Hacman { agent, .. } => agent.act(obs, mode, rng),
            Agent::Td3(t) => t.act(obs, mode, rng),
        }
    }

    fn random_action(&self, obs: &AgentObs, rng: &mut ChaCha8Rng) -> Result<AgentAction> {
        match self {
            Agent::Hacman { agent, .. } => Learner::random_action(agent, obs, rng),
            Agent::Td3(t) => t.random_action(obs, rng),
        }
    }

    fn execute(&self, env: &mut PlanarPushEnv, action: &AgentAction) -> Result<StepOutcome> {
        match self {
            Agent::Hacman { agent, .. } => agent.execute(env, action),
            Agent::Td3(t) => t.execute(env, action),
        }
    }

    fn update_critics(&mut self, batch: &[&Transition], rng: &mut ChaCha8Rng) -> Result<CriticStats> {
        match self {
            Agent::Hacman { agent, .. } => Learner::update_critics(agent, batch, rng),
            Agent::Td3(t) => t.update_critics(batch, rng),
        }
    }

    fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64> {
        match self {
            Agent::Hacman { agent, .. } => Learner::update_actor(agent, batch),
            Agent::Td3(t) => t.update_actor(batch),
        }
    }

    fn update_targets(&mut self) -> Result<()> {
        match self {
            Agent::Hacman { agent, .. } => Learner::update_targets(agent),
            Agent::Td3(t) => t.update_targets(),
        }
    }
}
