//! Randomized invariants across the environment, networks, agents and harness.

use std::collections::VecDeque;
use std::sync::Arc;

use hacman::baselines::{distance_penalty, make_ablation};
use hacman::env::{observe, push_step, regressed_location};
use hacman::hacman::{
    location_policy, AgentAction, AgentObs, InputMode, MetricsRecord, NetConfig, ReplayBuffer, Transition,
};
use hacman::harness::eval::evaluate_agent;
use hacman::harness::{build_agent, params_digest, RunConfig};
use hacman::pointcloud::mean_flow_norm;
use hacman::{
    Agent, AgentKind, BaselineKind, CriticMap, EnvConfig, HacmanAgent, HacmanOptions, ObservationMode, PlanarPushEnv,
    PointCloud, RigidTransform2D, Seg, TaskVariant, TrainConfig, Vec2,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_env() -> EnvConfig {
    EnvConfig { n_object_points: 12, n_background_points: 6, ..EnvConfig::default() }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        net: NetConfig { encoder: vec![8, 8], head: vec![8], input_scale: 4.0 },
        ..TrainConfig::default()
    }
}

fn arb_variant() -> impl Strategy<Value = TaskVariant> {
    prop_oneof![Just(TaskVariant::EASY), Just(TaskVariant::HARD), Just("cylindrical_analog/random/translation_only".parse().unwrap())]
}

fn arb_motion() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0..1.0f64, -1.5..1.5f64, -1.5..1.5f64)
}

fn contact_action(cloud: &PointCloud, (u, mx, my): (f64, f64, f64)) -> hacman::ActionCommand {
    let obj: Vec<usize> = cloud.object_indices().collect();
    let k = ((u * obj.len() as f64) as usize).min(obj.len() - 1);
    hacman::ActionCommand { contact_index: obj[k], motion_params: Vec2::new(mx, my) }
}

fn transitions(agent_env: &EnvConfig, n: usize, seed: u64) -> Vec<Transition> {
    let mut env = PlanarPushEnv::new(agent_env.clone(), TaskVariant::HARD, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n {
        let obs = Arc::new(AgentObs::from_env(&env));
        let a = HacmanAgent::random_action(&obs, &mut rng).unwrap();
        let res = env.step(&a).unwrap();
        out.push(Transition {
            observation: obs,
            action: AgentAction::Contact(a),
            reward: res.reward,
            next_observation: Arc::new(AgentObs::from_env(&env)),
            terminal: res.success,
        });
        if res.terminal {
            env.reset();
        }
    }
    out
}

fn permute_obs(obs: &AgentObs, perm: &[usize]) -> AgentObs {
    AgentObs { cloud: obs.cloud.permuted(perm), state: obs.state }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Environment

    #[test]
    fn step_invariants(seed in any::<u64>(), variant in arb_variant(), actions in prop::collection::vec(arb_motion(), 1..12)) {
        let config = small_env();
        let mut env = PlanarPushEnv::new(config.clone(), variant, seed).unwrap();
        for m in actions {
            let a = contact_action(env.observation(), m);
            let res = env.step(&a).unwrap();
            prop_assert!(res.reward <= 0.0);
            prop_assert_eq!(res.reward, -mean_flow_norm(&res.observation.object_flows()).unwrap());
            if res.success {
                prop_assert!(res.terminal);
                prop_assert!(res.reward > -config.success_threshold);
            }
            prop_assert!(env.state().step_count <= config.max_episode_steps);
            let h = config.bin_half_extent;
            for v in env.state().shape.vertices() {
                let p = env.state().pose.apply(*v);
                prop_assert!(p.x.abs() <= h + 1e-12 && p.y.abs() <= h + 1e-12);
            }
            let cloud = &res.observation;
            prop_assert_eq!(cloud.n_object(), config.n_object_points);
            prop_assert_eq!(cloud.len(), config.n_object_points + config.n_background_points);
            for (s, f) in cloud.seg().iter().zip(cloud.flow()) {
                if *s == Seg::Background {
                    prop_assert_eq!(*f, Vec2::ZERO);
                }
            }
            if res.terminal {
                env.reset();
            }
        }
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>(), actions in prop::collection::vec(arb_motion(), 1..15)) {
        let run = || {
            let mut env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, seed).unwrap();
            let mut out = Vec::new();
            for &m in &actions {
                let a = contact_action(env.observation(), m);
                let r = env.step(&a).unwrap();
                out.push((r.observation.clone(), r.reward.to_bits(), r.terminal));
                if r.terminal {
                    env.reset();
                }
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn centroid_push_reduces_flow(seed in any::<u64>(), angle in 0.0..std::f64::consts::TAU, frac in 0.05..1.0f64, theta in -3.0..3.0f64) {
        let config = EnvConfig::default();
        let mut env = PlanarPushEnv::new(config.clone(), TaskVariant::HARD, seed).unwrap();
        let shape = env.state().shape.clone();
        let dir = Vec2::new(angle.cos(), angle.sin());
        let d = dir * (frac * config.action_scale * config.action_repeat as f64);
        let pose = RigidTransform2D::new(theta, Vec2::ZERO);
        env.reset_to(shape.clone(), pose, RigidTransform2D::new(theta, d));
        let before = env.mean_flow().unwrap();
        let far = -dir;
        let t = shape.segment_entry(&pose, far, Vec2::ZERO).unwrap();
        let mut gripper = far + (Vec2::ZERO - far) * t;
        let mut state = env.state().clone();
        for _ in 0..config.action_repeat {
            let (s, g) = push_step(&config, &state, gripper, d * (1.0 / config.action_repeat as f64));
            state = s;
            gripper = g;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let after = mean_flow_norm(&observe(&config, &state, &mut rng).object_flows()).unwrap();
        prop_assert!(after < before, "{} -> {}", before, after);
    }

    #[test]
    fn invalid_lengths_rejected(which in 0usize..4, v in prop_oneof![Just(0.0), -1.0..0.0f64, Just(f64::NAN)]) {
        let mut c = EnvConfig::default();
        match which {
            0 => c.bin_half_extent = v,
            1 => c.action_scale = v,
            2 => c.success_threshold = v,
            _ => c.object_voxel = v,
        }
        prop_assert!(c.validate().is_err());
    }

    // Networks

    #[test]
    fn maps_are_permutation_equivariant(seed in any::<u64>(), env_seed in any::<u64>(), perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = HacmanAgent::new(small_train(), HacmanOptions::default(), &mut rng);
        let env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, env_seed).unwrap();
        let obs = AgentObs::from_env(&env);
        let mut perm: Vec<usize> = (0..obs.cloud.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let pobs = permute_obs(&obs, &perm);
        let am = agent.actor_map_forward(&obs).unwrap();
        let pam = agent.actor_map_forward(&pobs).unwrap();
        let cm = agent.critic_map_forward(&obs, &am).unwrap();
        let pcm = agent.critic_map_forward(&pobs, &pam).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((pam.0[k] - am.0[i]).norm() <= 1e-12);
            prop_assert!((pcm.0[k] - cm.0[i]).abs() <= 1e-12);
            prop_assert!(pam.0[k].x.abs() <= 1.0 && pam.0[k].y.abs() <= 1.0);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic(seed in any::<u64>(), env_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = HacmanAgent::new(small_train(), HacmanOptions::default(), &mut rng);
        let copy = agent.clone();
        let env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, env_seed).unwrap();
        let obs = AgentObs::from_env(&env);
        let a = agent.actor_map_forward(&obs).unwrap();
        let b = copy.actor_map_forward(&obs).unwrap();
        prop_assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.x.to_bits() == y.x.to_bits() && x.y.to_bits() == y.y.to_bits()));
        let qa = agent.critic_map_forward(&obs, &a).unwrap();
        let qb = copy.critic_map_forward(&obs, &b).unwrap();
        prop_assert!(qa.0.iter().zip(&qb.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    // Agent

    #[test]
    fn location_policy_is_a_distribution(
        q in prop::collection::vec(-30.0..30.0f64, 1..40),
        flags in prop::collection::vec(any::<bool>(), 40),
        beta in 0.01..10.0f64,
    ) {
        let n = q.len();
        let mut seg: Vec<Seg> = flags[..n].iter().map(|&o| if o { Seg::Object } else { Seg::Background }).collect();
        seg[0] = Seg::Object;
        let cloud = PointCloud::new(vec![Vec2::ZERO; n], vec![Vec2::ZERO; n], seg).unwrap();
        let p = location_policy(&CriticMap(q.clone()), &cloud, beta).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (pi, s) in p.iter().zip(cloud.seg()) {
            prop_assert!(*pi >= 0.0);
            if *s == Seg::Background {
                prop_assert_eq!(*pi, 0.0);
            }
        }
    }

    #[test]
    fn argmax_survives_positive_affine_maps(
        q in prop::collection::vec(-5.0..5.0f64, 2..20),
        a in 0.1..10.0f64,
        b in -10.0..10.0f64,
        beta in 0.05..2.0f64,
    ) {
        let n = q.len();
        let cloud = PointCloud::new(vec![Vec2::ZERO; n], vec![Vec2::ZERO; n], vec![Seg::Object; n]).unwrap();
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |m, i| if v[i] > v[m] { i } else { m });
        let p = location_policy(&CriticMap(q.clone()), &cloud, beta).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| a * v + b).collect();
        let ps = location_policy(&CriticMap(scaled), &cloud, beta).unwrap();
        prop_assert_eq!(argmax(&q), argmax(&p));
        prop_assert_eq!(argmax(&q), argmax(&ps));
    }

    #[test]
    fn twin_target_is_pointwise_minimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = small_train();
        cfg.target_noise = 0.0;
        let mut agent = HacmanAgent::new(cfg, HacmanOptions::default(), &mut rng);
        agent.params.critic2_target = agent.critic_spec.init(&mut rng);
        let data = transitions(&small_env(), 3, seed);
        let refs: Vec<&Transition> = data.iter().collect();
        let noise = agent.sample_target_noise(&refs, &mut rng);
        let (clamped, _, maps) = agent.critic_targets_detailed(&refs, &noise).unwrap();
        let (lo, hi) = agent.config.target_clamp;
        prop_assert!(clamped.iter().all(|y| (lo..=hi).contains(y)));
        let mut target = agent.clone();
        target.params.actor = agent.params.actor_target.clone();
        target.params.critic1 = agent.params.critic1_target.clone();
        target.params.critic2 = agent.params.critic2_target.clone();
        for (t, m) in data.iter().zip(&maps) {
            let next = t.next_observation.as_ref();
            let am = target.actor_map_forward(next).unwrap();
            let q1 = target.critic_map_forward(next, &am).unwrap().0;
            let q2 = target.critic2_map_forward(next, &am).unwrap().0;
            let obj: Vec<usize> = next.cloud.object_indices().collect();
            prop_assert_eq!(m.len(), obj.len());
            for (v, &i) in m.iter().zip(&obj) {
                prop_assert!(*v <= q1[i] + 1e-12 && *v <= q2[i] + 1e-12);
            }
        }
    }

    #[test]
    fn actor_step_decreases_objective(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = HacmanAgent::new(small_train(), HacmanOptions::default(), &mut rng);
        let data = transitions(&small_env(), 4, seed);
        let refs: Vec<&Transition> = data.iter().collect();
        let (before, w) = agent.actor_loss_eval(&agent.params.actor, &refs, None, false).unwrap();
        let zero_grad = before.grad.iter_scalars().all(|g| g == 0.0);
        prop_assume!(!zero_grad);
        let mut decreased = false;
        for lr in [1e-4, 1e-5] {
            let mut a = agent.clone();
            a.params.step_actor(&before.grad, lr).unwrap();
            let (after, _) = a.actor_loss_eval(&a.params.actor, &refs, Some(&w), false).unwrap();
            decreased |= after.loss < before.loss;
        }
        prop_assert!(decreased);
    }

    #[test]
    fn replay_is_fifo(capacity in 1usize..20, pushes in 0usize..60) {
        let template = transitions(&small_env(), 1, 0).remove(0);
        let mut buf = ReplayBuffer::new(capacity);
        let mut model = VecDeque::new();
        for i in 0..pushes {
            let mut t = template.clone();
            t.reward = -(i as f64);
            buf.push(t);
            model.push_back(-(i as f64));
            if model.len() > capacity {
                model.pop_front();
            }
            prop_assert!(buf.len() <= capacity);
        }
        let stored: Vec<f64> = (0..buf.len()).map(|i| buf.get(i).unwrap().reward).collect();
        let mut sorted = stored.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut expected: Vec<f64> = model.into_iter().collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(sorted, expected);
    }

    #[test]
    fn train_config_bounds(gamma in -1.0..2.0f64, beta in -1.0..1.0f64, lo in -30.0..5.0f64, hi in -30.0..5.0f64) {
        let c = TrainConfig { discount: gamma, location_temperature: beta, target_clamp: (lo, hi), ..TrainConfig::default() };
        let valid = gamma > 0.0 && gamma < 1.0 && beta > 0.0 && lo < hi;
        prop_assert_eq!(c.validate().is_ok(), valid);
    }

    // Baselines

    #[test]
    fn distance_penalty_continuous_and_nonincreasing(d in 0.0..1.0f64, e in 0.0..0.5f64, lambda in 0.0..10.0f64) {
        prop_assert!(distance_penalty(d + e, lambda) <= distance_penalty(d, lambda));
        prop_assert!(distance_penalty(d, lambda) <= 0.0);
        let left = distance_penalty(0.05 - 1e-12, lambda);
        let right = distance_penalty(0.05 + 1e-12, lambda);
        prop_assert!((left - right).abs() <= 1e-10);
    }

    #[test]
    fn greedy_target_is_clamped_reward(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = make_ablation(AgentKind::Baseline(BaselineKind::Greedy), &small_train(), &mut rng).unwrap();
        let mut data = transitions(&small_env(), 4, seed);
        data[0].reward = -50.0;
        let refs: Vec<&Transition> = data.iter().collect();
        let noise = agent.sample_target_noise(&refs, &mut rng);
        let y = agent.critic_targets(&refs, &noise).unwrap();
        let (lo, hi) = agent.config.target_clamp;
        for (t, v) in data.iter().zip(&y) {
            prop_assert_eq!(*v, t.reward.clamp(lo, hi));
        }
    }

    #[test]
    fn no_flow_inputs_hide_flow(seed in any::<u64>()) {
        let env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, seed).unwrap();
        let obs = AgentObs::from_env(&env);
        let mut zeroed = obs.clone();
        zeroed.cloud = PointCloud::new(
            obs.cloud.positions().to_vec(),
            vec![Vec2::ZERO; obs.cloud.len()],
            obs.cloud.seg().to_vec(),
        ).unwrap();
        // Goal-pose rows never depend on the flow field.
        let (mut a, mut b) = (Vec::new(), Vec::new());
        InputMode::GoalPose.write_rows(&obs, 4.0, &mut a);
        InputMode::GoalPose.write_rows(&zeroed, 4.0, &mut b);
        prop_assert_eq!(a.len(), obs.cloud.len() * InputMode::GoalPose.width());
        prop_assert_eq!(a, b);
        // Goal point clouds: the cloud rows carry no flow; goal rows are flagged.
        let mut rows = Vec::new();
        InputMode::GoalPointCloud.write_rows(&obs, 4.0, &mut rows);
        let w = InputMode::GoalPointCloud.width();
        let n = obs.cloud.len();
        prop_assert_eq!(rows.len(), (n + obs.cloud.n_object()) * w);
        for (r, chunk) in rows.chunks(w).enumerate() {
            prop_assert_eq!(chunk[3], if r < n { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn regressed_location_inside_bbox(seed in any::<u64>(), rx in -3.0..3.0f64, ry in -3.0..3.0f64) {
        let env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, seed).unwrap();
        let state = env.state();
        let (lo, hi) = state.shape.bbox(&state.pose);
        let p = regressed_location(state, Vec2::new(rx, ry));
        prop_assert!(p.x >= lo.x - 1e-12 && p.x <= hi.x + 1e-12);
        prop_assert!(p.y >= lo.y - 1e-12 && p.y <= hi.y + 1e-12);
    }

    // Harness

    #[test]
    fn metrics_rows_round_trip(
        step in any::<u32>(), episode in any::<u32>(), rate in 0.0..1.0f64, reward in -100.0..0.0f64,
        losses in prop::collection::vec(prop_oneof![Just(f64::NAN), -1e6..1e6f64], 3), buffer in any::<u32>(),
    ) {
        let r = MetricsRecord {
            step: step as usize, episode: episode as usize, success_rate: rate, mean_episode_reward: reward,
            actor_loss: losses[0], critic_loss: losses[1], mean_q: losses[2], buffer_size: buffer as usize, wall_time_s: 0.0,
        };
        let back = MetricsRecord::from_csv_row(&r.to_csv_row()).unwrap();
        prop_assert_eq!(back.to_csv_row(), r.to_csv_row());
        prop_assert_eq!(back.step, r.step);
        prop_assert_eq!(back.success_rate.to_bits(), r.success_rate.to_bits());
    }

    #[test]
    fn resolved_config_round_trips(
        seed in any::<u64>(), lr in 1e-6..1e-2f64, tau in 1e-4..0.1f64, batch in 1usize..512,
        kind in prop::sample::select(vec!["hacman", "greedy", "regress_contact_location", "no_flow_goal_pose"]),
        rot in prop::option::of(0.0..100.0f64), stop in prop::option::of(0.0..1.0f64),
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.train.learning_rate = lr;
        cfg.train.polyak_tau = tau;
        cfg.train.batch_size = batch;
        cfg.agent = kind.parse().unwrap();
        cfg.env.push_rotation_gain = rot;
        cfg.stop_at_success = stop;
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_named(suffix in "[a-z]{3,10}") {
        let key = format!("train.zz_{suffix}");
        let err = RunConfig::parse(&format!("{key} = 1\n")).unwrap_err().to_string();
        prop_assert!(err.contains(&key));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn evaluation_leaves_parameters_untouched(
        seed in any::<u64>(),
        kind in prop::sample::select(vec!["hacman", "random_location", "no_actor_map", "regress_contact_location", "no_contact_location"]),
        state_mode in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.agent = kind.parse().unwrap();
        cfg.env = small_env();
        cfg.train = small_train();
        if state_mode && matches!(cfg.agent, AgentKind::Baseline(b) if b.is_global()) {
            cfg.observation = ObservationMode::State;
        }
        let agent: Agent = build_agent(&cfg).unwrap();
        let before = params_digest(agent.params());
        let a = evaluate_agent(&agent, &cfg.env, TaskVariant::HARD, 3, seed, 1).unwrap();
        let b = evaluate_agent(&agent, &cfg.env, TaskVariant::HARD, 3, seed, 2).unwrap();
        prop_assert_eq!(params_digest(agent.params()), before);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn targets_mirror_online_layouts(seed in any::<u64>(), kind in prop::sample::select(BaselineKind::ALL.to_vec())) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(AgentKind::Baseline(kind), ObservationMode::PointCloud, &small_train(), &mut rng).unwrap();
        let p = agent.params();
        prop_assert!(p.actor_target.check_same_layout(&p.actor).is_ok());
        prop_assert!(p.critic1_target.check_same_layout(&p.critic1).is_ok());
        prop_assert!(p.critic2_target.check_same_layout(&p.critic2).is_ok());
    }
}

#[test]
fn encoder_rows_match_cloud_for_flow_input() {
    let env = PlanarPushEnv::new(small_env(), TaskVariant::HARD, 3).unwrap();
    let obs = AgentObs::from_env(&env);
    let mut rows = Vec::new();
    InputMode::Flow.write_rows(&obs, 1.0, &mut rows);
    for (i, chunk) in rows.chunks(InputMode::Flow.width()).enumerate() {
        assert_eq!(chunk[2], obs.cloud.flow()[i].x);
        assert_eq!(chunk[4], if obs.cloud.seg()[i] == Seg::Object { 1.0 } else { 0.0 });
    }
}
