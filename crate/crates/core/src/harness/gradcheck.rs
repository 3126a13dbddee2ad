//! Finite-difference checks of every agent's actor and critic gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{Agent, AgentKind, BaselineKind, ObservationMode};
use crate::env::{EnvConfig, PlanarPushEnv, TaskVariant};
use crate::error::{Error, NetError, Result};
use crate::hacman::{AgentObs, Learner, LossEval, NetConfig, TrainConfig, Transition};
use crate::netcore::{grad_check, GradCheckReport, Objective, ParameterStore};

/// Below this distance from a relu or max-pool kink an instance is redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REROLLS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Actor,
    Critic,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Actor => "actor",
            Role::Critic => "critic",
        }
    }
}

/// Every distinct network architecture an agent can have.
pub fn architectures() -> Vec<(String, AgentKind, ObservationMode)> {
    let mut v = vec![("hacman".to_string(), AgentKind::Hacman, ObservationMode::PointCloud)];
    for b in BaselineKind::ALL {
        v.push((b.name().to_string(), AgentKind::Baseline(b), ObservationMode::PointCloud));
        if b.is_global() {
            v.push((format!("{}/state", b.name()), AgentKind::Baseline(b), ObservationMode::State));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub architecture: String,
    pub role: Role,
    pub seed: u64,
    pub rerolls: usize,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Offsets the analytic gradient to check that failures are caught.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            epsilon: 1e-5,
            tolerance: 1e-4,
            inject_fault: false,
        }
    }
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        net: NetConfig { encoder: vec![6, 5], head: vec![5], input_scale: 4.0 },
        ..TrainConfig::default()
    }
}

fn small_env_config() -> EnvConfig {
    EnvConfig { n_object_points: 5, n_background_points: 3, ..EnvConfig::default() }
}

/// Fixed inputs of one differentiable loss.
struct Instance {
    agent: Agent,
    batch: Vec<Transition>,
    targets: Vec<f64>,
    weights: Option<Vec<Vec<f64>>>,
}

fn draw_instance(kind: AgentKind, obs: ObservationMode, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let agent = Agent::new(kind, obs, &small_train_config(), rng)?;
    let mut env = PlanarPushEnv::new(small_env_config(), TaskVariant::HARD, rng.random())?;
    agent.on_reset(&mut env);
    let mut batch = Vec::new();
    for _ in 0..3 {
        let o = Arc::new(AgentObs::from_env(&env));
        let a = agent.random_action(&o, rng)?;
        let out = agent.execute(&mut env, &a)?;
        batch.push(Transition {
            observation: o,
            action: a,
            reward: out.reward,
            next_observation: Arc::new(AgentObs::from_env(&env)),
            terminal: out.success,
        });
    }
    let targets = (0..batch.len()).map(|_| rng.random_range(-2.0..0.0)).collect();
    Ok(Instance { agent, batch, targets, weights: None })
}

impl Instance {
    fn eval(&self, role: Role, params: &ParameterStore, margin: bool) -> Result<LossEval> {
        let refs: Vec<&Transition> = self.batch.iter().collect();
        match (&self.agent, role) {
            (Agent::Hacman { agent, .. }, Role::Critic) => agent.critic_loss_eval(params, &refs, &self.targets, margin),
            (Agent::Hacman { agent, .. }, Role::Actor) => {
                Ok(agent.actor_loss_eval(params, &refs, self.weights.as_deref(), margin)?.0)
            }
            (Agent::Td3(t), Role::Critic) => t.critic_loss_eval(params, &refs, &self.targets, margin),
            (Agent::Td3(t), Role::Actor) => t.actor_loss_eval(params, &refs, margin),
        }
    }

    fn base(&self, role: Role) -> &ParameterStore {
        match role {
            Role::Actor => &self.agent.params().actor,
            Role::Critic => &self.agent.params().critic1,
        }
    }

    /// Freezes the location weights at the base parameters, matching the
    /// stop-gradient in the analytic actor gradient.
    fn freeze_weights(&mut self) -> Result<()> {
        if let Agent::Hacman { agent, .. } = &self.agent {
            let refs: Vec<&Transition> = self.batch.iter().collect();
            let (_, w) = agent.actor_loss_eval(&agent.params.actor, &refs, None, false)?;
            self.weights = Some(w);
        }
        Ok(())
    }
}

struct LossObjective<'a> {
    instance: &'a Instance,
    role: Role,
    fault: bool,
}

impl Objective for LossObjective<'_> {
    fn value(&self, params: &ParameterStore) -> f64 {
        self.instance.eval(self.role, params, false).map(|e| e.loss).unwrap_or(f64::NAN)
    }

    fn gradient(&self, params: &ParameterStore) -> std::result::Result<ParameterStore, NetError> {
        let mut g = match self.instance.eval(self.role, params, false) {
            Ok(e) => e.grad,
            Err(Error::Net(e)) => return Err(e),
            Err(e) => return Err(NetError::Shape(e.to_string())),
        };
        if self.fault {
            if let Some(v) = g.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).next() {
                *v += 1e-3;
            }
        }
        Ok(g)
    }
}

/// Checks one architecture and role at one seed, redrawing instances that sit near a kink.
pub fn check_case(
    name: &str,
    kind: AgentKind,
    obs: ObservationMode,
    role: Role,
    seed: u64,
    opts: &SuiteOptions,
) -> Result<GradCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rerolls in 0..MAX_REROLLS {
        let mut inst = draw_instance(kind, obs, &mut rng)?;
        inst.freeze_weights()?;
        let base = inst.base(role).clone();
        if inst.eval(role, &base, true)?.margin < KINK_MARGIN {
            continue;
        }
        let obj = LossObjective { instance: &inst, role, fault: opts.inject_fault };
        let report = grad_check(&obj, &base, opts.epsilon)?;
        return Ok(GradCheckCase { architecture: name.to_string(), role, seed, rerolls, report });
    }
    Err(Error::config("gradcheck", format!("{name}: no kink-free instance for seed {seed}")))
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::new();
    for (name, kind, obs) in architectures() {
        for role in [Role::Actor, Role::Critic] {
            for &seed in &opts.seeds {
                out.push(check_case(&name, kind, obs, role, seed, opts)?);
            }
        }
    }
    Ok(out)
}

pub fn all_pass(cases: &[GradCheckCase], tolerance: f64) -> bool {
    cases.iter().all(|c| c.report.passes(tolerance))
}
