//! Naive loop-based forward passes checked against the library maps.

use hacman::baselines::{GlobalAction, Td3Agent};
use hacman::env::{EnvConfig, PlanarPushEnv, TaskVariant};
use hacman::hacman::{AgentObs, NetConfig};
use hacman::netcore::ParameterStore;
use hacman::{ActorMap, HacmanAgent, HacmanOptions, ObservationMode, Seg, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SCALE: f64 = 4.0;

fn tensor<'a>(store: &'a ParameterStore, name: &str) -> (&'a [f64], usize, usize) {
    let t = store.tensors.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("no tensor {name}"));
    (&t.data, t.rows, t.cols)
}

fn dense(store: &ParameterStore, prefix: &str, i: usize, x: &[f64], relu: bool) -> Vec<f64> {
    let (w, rows, cols) = tensor(store, &format!("{prefix}.{i}.w"));
    let (b, _, _) = tensor(store, &format!("{prefix}.{i}.b"));
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| {
            let mut s = b[j];
            for (k, xk) in x.iter().enumerate() {
                s += xk * w[k * cols + j];
            }
            if relu { s.max(0.0) } else { s }
        })
        .collect()
}

fn layer_count(store: &ParameterStore, prefix: &str) -> usize {
    (0..).take_while(|i| store.tensors.iter().any(|t| t.name == format!("{prefix}.{i}.w"))).count()
}

fn encode(store: &ParameterStore, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for i in 0..layer_count(store, "enc") {
        h = dense(store, "enc", i, &h, true);
    }
    h
}

fn head(store: &ParameterStore, x: &[f64], tanh: bool) -> Vec<f64> {
    let n = layer_count(store, "head");
    let mut h = x.to_vec();
    for i in 0..n {
        h = dense(store, "head", i, &h, i + 1 < n);
    }
    if tanh {
        h.iter_mut().for_each(|v| *v = v.tanh());
    }
    h
}

fn flow_rows(obs: &AgentObs) -> Vec<Vec<f64>> {
    let c = &obs.cloud;
    (0..c.len())
        .map(|i| {
            let p = c.positions()[i];
            let f = c.flow()[i];
            let obj = if c.seg()[i] == Seg::Object { 1.0 } else { 0.0 };
            vec![p.x * SCALE, p.y * SCALE, f.x * SCALE, f.y * SCALE, obj]
        })
        .collect()
}

fn max_pool(e: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![f64::NEG_INFINITY; e[0].len()];
    for row in e {
        for (a, b) in m.iter_mut().zip(row) {
            *a = a.max(*b);
        }
    }
    m
}

fn oracle_actor_map(store: &ParameterStore, obs: &AgentObs) -> Vec<Vec<f64>> {
    let e: Vec<Vec<f64>> = flow_rows(obs).iter().map(|x| encode(store, x)).collect();
    let g = max_pool(&e);
    e.iter().map(|ei| head(store, &[ei.clone(), g.clone()].concat(), true)).collect()
}

fn oracle_critic_map(store: &ParameterStore, obs: &AgentObs, am: &ActorMap) -> Vec<f64> {
    let e: Vec<Vec<f64>> = flow_rows(obs).iter().map(|x| encode(store, x)).collect();
    let g = max_pool(&e);
    e.iter()
        .zip(&am.0)
        .map(|(ei, a)| head(store, &[ei.clone(), g.clone(), vec![a.x, a.y]].concat(), false)[0])
        .collect()
}

fn config(encoder: &[usize], head: &[usize]) -> TrainConfig {
    TrainConfig {
        net: NetConfig { encoder: encoder.to_vec(), head: head.to_vec(), ..NetConfig::default() },
        ..TrainConfig::default()
    }
}

fn observation(seed: u64) -> AgentObs {
    let env_cfg = EnvConfig { n_object_points: 12, n_background_points: 6, ..EnvConfig::default() };
    let env = PlanarPushEnv::new(env_cfg, TaskVariant::HARD, seed).unwrap();
    AgentObs::from_env(&env)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[test]
fn default_scale_matches_oracle_constant() {
    assert_eq!(NetConfig::default().input_scale, SCALE);
}

#[test]
fn actor_and_critic_maps_match_naive_forward() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = HacmanAgent::new(config(&[16, 8], &[12, 6]), HacmanOptions::default(), &mut rng);
        let obs = observation(seed);
        let am = agent.actor_map_forward(&obs).unwrap();
        let want = oracle_actor_map(&agent.params.actor, &obs);
        assert_eq!(am.0.len(), want.len());
        for (a, w) in am.0.iter().zip(&want) {
            assert!(close(a.x, w[0]) && close(a.y, w[1]), "actor {a:?} vs {w:?}");
        }
        let cm = agent.critic_map_forward(&obs, &am).unwrap();
        let want = oracle_critic_map(&agent.params.critic1, &obs, &am);
        for (q, w) in cm.0.iter().zip(&want) {
            assert!(close(*q, *w), "critic {q} vs {w}");
        }
        let cm2 = agent.critic2_map_forward(&obs, &am).unwrap();
        let want2 = oracle_critic_map(&agent.params.critic2, &obs, &am);
        for (q, w) in cm2.0.iter().zip(&want2) {
            assert!(close(*q, *w), "critic2 {q} vs {w}");
        }
    }
}

#[test]
fn regress_baseline_matches_naive_forward() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Td3Agent::new(config(&[16, 8], &[12]), GlobalAction::RegressContact, ObservationMode::PointCloud, &mut rng);
        let obs = observation(seed);
        let e: Vec<Vec<f64>> = flow_rows(&obs).iter().map(|x| encode(&agent.params.actor, x)).collect();
        let mut input = max_pool(&e);
        if agent.actor_spec.extra > 0 {
            input.extend([obs.state.gripper.x * SCALE, obs.state.gripper.y * SCALE]);
        }
        let want = head(&agent.params.actor, &input, true);
        let got = agent.actor_forward(&obs).unwrap();
        assert_eq!(got.len(), 4);
        for (g, w) in got.iter().zip(&want) {
            assert!(close(*g, *w), "{g} vs {w}");
        }
    }
}

#[test]
fn pinned_forward_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let agent = HacmanAgent::new(config(&[8], &[8]), HacmanOptions::default(), &mut rng);
    let obs = observation(11);
    let am = agent.actor_map_forward(&obs).unwrap();
    let cm = agent.critic_map_forward(&obs, &am).unwrap();
    let sum_x: f64 = am.0.iter().map(|a| a.x).sum();
    let sum_q: f64 = cm.0.iter().sum();
    assert!(close(sum_x, PINNED_ACTOR_X), "{sum_x:.17e}");
    assert!(close(sum_q, PINNED_CRITIC), "{sum_q:.17e}");
}

const PINNED_ACTOR_X: f64 = 7.42724729208942169e-1;
const PINNED_CRITIC: f64 = -1.22086330664808926e1;
