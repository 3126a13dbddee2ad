//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use hacman::env::{EnvConfig, PlanarPushEnv, TaskVariant};
use hacman::hacman::{AgentAction, AgentObs, HacmanAgent, HacmanOptions, NetConfig, TrainConfig, Transition};
use rand::Rng;

/// Training config at the given network width with default point counts.
pub fn train_config(width: usize) -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            encoder: vec![width; 3],
            head: vec![width; 3],
            input_scale: 4.0,
        },
        ..TrainConfig::default()
    }
}

pub fn agent(width: usize, rng: &mut impl Rng) -> HacmanAgent {
    HacmanAgent::new(train_config(width), HacmanOptions::default(), rng)
}

/// Random-action transitions collected from a fresh environment.
pub fn transitions(env_config: &EnvConfig, n: usize, seed: u64, rng: &mut impl Rng) -> Vec<Transition> {
    let mut env = PlanarPushEnv::new(env_config.clone(), TaskVariant::HARD, seed).expect("valid config");
    let mut obs = Arc::new(AgentObs::from_env(&env));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = HacmanAgent::random_action(&obs, rng).expect("object points");
        let res = env.step(&a).expect("valid action");
        let next = Arc::new(AgentObs::from_env(&env));
        out.push(Transition {
            observation: obs,
            action: AgentAction::Contact(a),
            reward: res.reward,
            next_observation: next.clone(),
            terminal: res.success,
        });
        obs = if res.terminal {
            env.reset();
            Arc::new(AgentObs::from_env(&env))
        } else {
            next
        };
    }
    out
}
