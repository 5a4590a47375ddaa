use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::approx::{finite_diff_check, Activation, CategoricalPolicy, GaussianPolicy, Network};
use crate::data::testutil::random_dataset;
use crate::data::{ActionSpec, Trajectory, Transition};
use crate::offline_rl::{Algo, CriticKind, TrainConfig};

fn tiny_train() -> TrainConfig {
    TrainConfig {
        steps: 30,
        batch_size: 16,
        hidden: vec![8],
        ..TrainConfig::default()
    }
}

fn tiny_unlearn(k: usize, h: usize) -> UnlearnConfig {
    UnlearnConfig {
        k,
        h,
        batch_size: 16,
        advantage_samples: 3,
        ..UnlearnConfig::default()
    }
}

/// Single-state, two-action bandit; trajectories `< n_forget` take action 1.
fn bandit(n: usize, n_forget: usize) -> (OfflineDataset, DatasetSplit) {
    let trajectories = (0..n)
        .map(|id| {
            let t = Transition {
                state: vec![1.0],
                action: Action::Discrete(if id < n_forget { 1 } else { 0 }),
                reward: 0.0,
                next_state: vec![1.0],
                done: true,
            };
            Trajectory::from_transitions(id, vec![t]).unwrap()
        })
        .collect();
    let ds = OfflineDataset::new("bandit", 1, ActionSpec::Discrete(2), trajectories).unwrap();
    let split = DatasetSplit::from_forget_ids((0..n_forget).collect(), n, n_forget as f64 / n as f64, 0).unwrap();
    (ds, split)
}

fn const_critic(values: &[f32]) -> Critic {
    Critic {
        kind: CriticKind::Discrete(values.len()),
        net: Network::from_layers(vec![(Array2::zeros((1, values.len())), values.to_vec())], vec![]).unwrap(),
    }
}

/// Bandit agent with uniform linear policy and a fixed critic `Q = q`.
fn bandit_agent(ds: &OfflineDataset, q: &[f32]) -> Agent {
    let mut agent = Agent::init(Algo::Iql, ds, &tiny_train(), 0).unwrap();
    agent.policy = PolicyHead::Categorical(CategoricalPolicy {
        logit_net: Network::zeros(&[1, 2], Activation::Tanh).unwrap(),
    });
    agent.critics = vec![const_critic(q), const_critic(q)];
    agent.target_critics = agent.critics.clone();
    agent
}

fn prob_of(agent: &Agent, a: usize) -> f32 {
    agent.policy.probs(array![[1.0f32]].view()).unwrap()[[0, a]]
}

#[test]
fn config_rules() {
    assert!(UnlearnConfig::default().validate().is_ok());
    assert!(tiny_unlearn(0, 0).validate().is_err());
    let mut c = tiny_unlearn(0, 5);
    c.method = Method::ForgettingOnly;
    assert!(c.validate().is_err());
    c.method = Method::Finetune;
    assert!(c.validate().is_ok());
    assert!(UnlearnConfig { lambda: -1.0, ..UnlearnConfig::default() }.validate().is_err());
    assert!(UnlearnConfig { advantage_samples: 0, ..UnlearnConfig::default() }.validate().is_err());
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!(matches!("sisa".parse::<Method>(), Err(Error::Usage(_))));
    let parsed: UnlearnConfig = toml::from_str("k = 10\nh = 2\nmethod = \"forgetting_only\"").unwrap();
    assert_eq!((parsed.k, parsed.convergence_steps(), parsed.lambda), (10, 0, 1.0));
}

#[test]
fn discrete_advantage_examples() {
    let (ds, _) = bandit(4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let flat = bandit_agent(&ds, &[1.0, 1.0]);
    for a in 0..2 {
        assert_eq!(advantage(&flat, &[1.0], &Action::Discrete(a), 1, &mut rng).unwrap(), 0.0);
    }
    let agent = bandit_agent(&ds, &[2.0, 0.0]);
    assert_eq!(advantage(&agent, &[1.0], &Action::Discrete(0), 1, &mut rng).unwrap(), 1.0);
    assert_eq!(advantage(&agent, &[1.0], &Action::Discrete(1), 1, &mut rng).unwrap(), -1.0);
}

#[test]
fn discrete_advantage_has_zero_policy_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let critic = Critic::new(3, CriticKind::Discrete(4), &[5], Activation::Tanh, &mut rng).unwrap();
    let policy = PolicyHead::Categorical(CategoricalPolicy {
        logit_net: Network::new(&[3, 5, 4], Activation::Tanh, &mut rng).unwrap(),
    });
    let s = Array2::from_shape_fn((6, 3), |_| rng.random_range(-2.0..2.0f32));
    let p = policy.probs(s.view()).unwrap();
    let mut mean = vec![0.0f64; 6];
    for a in 0..4 {
        let adv = advantages(&critic, &policy, s.view(), &ActionBatch::Discrete(vec![a; 6]), 1, &mut rng).unwrap();
        for i in 0..6 {
            mean[i] += p[[i, a]] as f64 * adv[i] as f64;
        }
    }
    assert!(mean.iter().all(|m| m.abs() < 1e-6), "{mean:?}");
}

#[test]
fn continuous_advantage_uses_policy_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = random_dataset(3, 5, false);
    let agent = crate::offline_rl::train_td3bc(&ds, &tiny_train(), 1).unwrap();
    let s = &ds.trajectories[0].states[0];
    let a = &ds.trajectories[0].actions[0];
    let one = advantage(&agent, s, a, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let again = advantage(&agent, s, a, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(one, again);
    // the sampled baseline concentrates around Q(s, mu(s)) for a narrow policy
    let big = advantage(&agent, s, a, 2000, &mut rng).unwrap();
    let x = agent.normalize(&[s]);
    let mu = agent.policy.mean(x.view()).unwrap();
    let q_mu = agent.critics[0].q(x.view(), &ActionBatch::Continuous(mu)).unwrap()[0] as f64;
    let a_row: Vec<f32> = a.as_continuous().unwrap().iter().map(|&v| v as f32).collect();
    let a_batch = Array2::from_shape_vec((1, a_row.len()), a_row).unwrap();
    let q_a = agent.critics[0].q(x.view(), &ActionBatch::Continuous(a_batch)).unwrap()[0] as f64;
    assert!((big - (q_a - q_mu)).abs() < 0.05, "{big} vs {}", q_a - q_mu);
}

#[test]
fn pg_surrogate_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lambda = 0.75;
    let cat = PolicyHead::Categorical(CategoricalPolicy {
        logit_net: Network::<f64>::new(&[3, 6, 4], Activation::Tanh, &mut rng).unwrap(),
    });
    let sm = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    let sf = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
    let am = ActionBatch::Discrete(vec![0, 3, 2, 1, 1]);
    let af = ActionBatch::Discrete(vec![2, 2, 0, 3]);
    let adv_m: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let adv_f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |p: &[f64]| {
        let mut pi = cat.clone();
        pi.net_mut().params_mut().copy_from_slice(p);
        let (lm, mut g) = pg_loss(&pi, sm.view(), &am, &adv_m, 1.0).unwrap();
        let (lf, gf) = pg_loss(&pi, sf.view(), &af, &adv_f, 1.0).unwrap();
        g.add_scaled(&gf, -lambda);
        (lm - lambda * lf, g.net)
    };
    let r = finite_diff_check(objective, cat.net().params(), 1e-3);
    assert!(r.pass, "{r:?}");

    let gauss = PolicyHead::Gaussian(GaussianPolicy {
        mean_net: Network::<f64>::new(&[3, 6, 2], Activation::Tanh, &mut rng).unwrap(),
        log_std: vec![-0.3, 0.1],
        learn_log_std: true,
        action_bound: 1.0,
    });
    let a = ActionBatch::Continuous(Array2::from_shape_fn((5, 2), |_| rng.random_range(-0.9..0.9)));
    let n = gauss.net().num_params();
    let mut p0 = gauss.net().params().to_vec();
    p0.extend_from_slice(gauss.log_std());
    let r = finite_diff_check(
        |p: &[f64]| {
            let mut pi = gauss.clone();
            pi.net_mut().params_mut().copy_from_slice(&p[..n]);
            if let PolicyHead::Gaussian(g) = &mut pi {
                g.log_std.copy_from_slice(&p[n..]);
            }
            let (l, g) = pg_loss(&pi, sm.view(), &a, &adv_m, -lambda).unwrap();
            (l, g.flat())
        },
        &p0,
        1e-3,
    );
    assert!(r.pass, "{r:?}");
}

#[test]
fn lambda_zero_ignores_the_forget_set() {
    let ds = random_dataset(4, 12, true);
    let agent = crate::offline_rl::train_iql(&ds, &tiny_train(), 2).unwrap();
    let cfg = UnlearnConfig {
        lambda: 0.0,
        ..tiny_unlearn(1, 0)
    };
    let remain = agent.pool(&ds, Some(&[0, 1, 2, 3, 4, 5])).unwrap();
    let all = agent.pool(&ds, None).unwrap();
    let f1 = agent.pool(&ds, Some(&[6, 7, 8])).unwrap();
    let f2 = agent.pool(&ds, Some(&[9, 10, 11])).unwrap();

    let mut s1 = UnlearnState::new(&agent, &cfg);
    let mut s2 = UnlearnState::new(&agent, &cfg);
    forgetting_step(&mut s1, &remain, &f1, &all, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    forgetting_step(&mut s2, &remain, &f2, &all, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(s1.agent.policy, s2.agent.policy);

    // the same step assembled by hand from the D_m surrogate alone
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bm = remain.sample(cfg.batch_size, &mut rng).unwrap();
    let actions = agent.policy.sample(bm.states.view(), &mut rng).unwrap();
    let adv = advantages(&agent.critics[0], &agent.policy, bm.states.view(), &actions, cfg.advantage_samples, &mut rng).unwrap();
    let (_, g) = pg_loss(&agent.policy, bm.states.view(), &actions, &adv, 1.0).unwrap();
    let mut manual = agent.policy.clone();
    manual.apply(&mut PolicyOptimizer::new(&agent.policy, cfg.lr_actor), &g).unwrap();
    assert_eq!(manual, s1.agent.policy);
    assert_ne!(manual, agent.policy);
}

#[test]
fn forget_term_alone_lowers_the_forgotten_action() {
    let (ds, _) = bandit(10, 10);
    let agent = bandit_agent(&ds, &[0.0, 1.0]);
    let pool = agent.pool(&ds, None).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = pool.sample(8, &mut rng).unwrap();
        let actions = agent.policy.sample(b.states.view(), &mut rng).unwrap();
        let adv = advantages(&agent.critics[0], &agent.policy, b.states.view(), &actions, 1, &mut rng).unwrap();
        let (_, g) = pg_loss(&agent.policy, b.states.view(), &actions, &adv, -1.0).unwrap();
        let mut after = agent.clone();
        after.policy.apply(&mut PolicyOptimizer::new(&agent.policy, 1e-2), &g).unwrap();
        assert!(prob_of(&after, 1) < prob_of(&agent, 1));
    }
}

#[test]
fn larger_lambda_never_raises_the_forgotten_action() {
    let (ds, split) = bandit(20, 10);
    let agent = bandit_agent(&ds, &[0.0, 1.0]);
    let remain = agent.pool(&ds, Some(&split.remain_ids)).unwrap();
    let forget = agent.pool(&ds, Some(&split.forget_ids)).unwrap();
    let all = agent.pool(&ds, None).unwrap();
    for seed in 0..100 {
        let mut last = f32::INFINITY;
        for lambda in [0.25, 0.5, 0.75, 1.0, 1.5] {
            let cfg = UnlearnConfig {
                lambda,
                lr_actor: 1e-2,
                ..tiny_unlearn(1, 0)
            };
            let mut st = UnlearnState::new(&agent, &cfg);
            forgetting_step(&mut st, &remain, &forget, &all, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let p = prob_of(&st.agent, 1);
            assert!(p <= last, "seed {seed}: lambda {lambda} raised pi(a_f) to {p} from {last}");
            last = p;
        }
        assert!(last < prob_of(&agent, 1));
    }
}

#[test]
fn convergence_gap_term() {
    let (ds, split) = bandit(6, 2);
    let agent = bandit_agent(&ds, &[3.0, 3.0]);
    let remain = agent.pool(&ds, Some(&split.remain_ids)).unwrap();
    let cfg = tiny_unlearn(0, 1);
    // identical critics: only the TD term remains
    let mut st = UnlearnState::new(&agent, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = remain.sample(4, &mut rng).unwrap();
    let anchors: Vec<Vec<f32>> = agent.critics.iter().map(|c| c.q(batch.states.view(), &batch.actions).unwrap()).collect();
    let (_, gap) = st.critic_td_step(&batch, Some(&anchors), &cfg, &mut rng).unwrap();
    assert_eq!(gap, 0.0);

    // scalar case Q' = 3 against Q = 1: loss 4, dL/dQ' = 4
    let q3 = Critic::<f64> {
        kind: CriticKind::Discrete(1),
        net: Network::from_layers(vec![(Array2::zeros((1, 1)), vec![3.0])], vec![]).unwrap(),
    };
    let (l, g) = critic_regression(&q3, array![[0.0]].view(), &ActionBatch::Discrete(vec![0]), &[&[1.0]]).unwrap();
    assert_eq!(l[0], 4.0);
    assert_eq!(g, vec![0.0, 4.0]);
}

#[test]
fn unlearn_is_deterministic_and_read_only() {
    let ds = random_dataset(6, 10, true);
    let agent = crate::offline_rl::train_iql(&ds, &tiny_train(), 3).unwrap();
    let split = crate::data::split_dataset(&ds, 0.2, 1).unwrap();
    let (ds0, agent0) = (ds.clone(), agent.clone());
    let cfg = tiny_unlearn(4, 3);
    let (a, ra) = unlearn(&agent, &ds, &split, &cfg, 9).unwrap();
    let (b, rb) = unlearn(&agent, &ds, &split, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(ds, ds0);
    assert_eq!(agent, agent0);
    assert_eq!(ra.steps_used, 7);
    assert_eq!(ra.trace.len(), 7);
    assert_eq!(ra.trace.iter().map(|r| r.step).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    assert_eq!(ra.trace[3].phase, Phase::Forgetting);
    assert_eq!(ra.trace[4].phase, Phase::Convergence);
    assert_eq!(rb.trace.len(), ra.trace.len());
    assert!(ra.critic_gap_start.is_some() && ra.critic_gap_end.is_some());
    assert_ne!(a.policy, agent.policy);

    let only = UnlearnConfig {
        method: Method::ForgettingOnly,
        ..cfg.clone()
    };
    let (_, r) = unlearn(&agent, &ds, &split, &only, 9).unwrap();
    assert_eq!(r.steps_used, 4);
    assert!(r.critic_gap_start.is_none());
    let bad = UnlearnConfig {
        method: Method::Finetune,
        ..cfg
    };
    assert!(unlearn(&agent, &ds, &split, &bad, 9).is_err());
}

#[test]
fn baselines() {
    let ds = random_dataset(7, 10, true);
    let agent = crate::offline_rl::train_iql(&ds, &tiny_train(), 3).unwrap();
    let split = crate::data::split_dataset(&ds, 0.2, 1).unwrap();
    let zero = UnlearnConfig {
        method: Method::Finetune,
        ..tiny_unlearn(0, 0)
    };
    let (same, r) = run_method(&agent, &ds, &split, &zero, 1).unwrap();
    assert_eq!(same, agent);
    assert_eq!(r.steps_used, 0);

    let cfg = tiny_unlearn(3, 2);
    let (ft, r) = run_baseline(Method::Finetune, &agent, &ds, &split, &cfg, 1).unwrap();
    assert_eq!((ft.train_steps, r.trace.len()), (35, 5));
    assert_eq!(ft.config, agent.config);
    let (rr, r) = run_baseline(Method::RandomReward, &agent, &ds, &split, &cfg, 1).unwrap();
    assert_eq!((rr.train_steps, r.trace.len()), (35, 5));
    let (re, r) = run_baseline(Method::Retrain, &agent, &ds, &split, &cfg, 1).unwrap();
    assert_eq!((re.train_steps, r.trace.len()), (30, 30));
    assert_eq!(re.config, agent.config);
    assert!(run_baseline(Method::Trajdeleter, &agent, &ds, &split, &cfg, 1).is_err());
}

#[test]
fn trace_csv_and_json() {
    let ds = random_dataset(8, 8, false);
    let agent = crate::offline_rl::train_td3bc(&ds, &tiny_train(), 3).unwrap();
    let split = crate::data::split_dataset(&ds, 0.25, 1).unwrap();
    let (_, report) = unlearn(&agent, &ds, &split, &tiny_unlearn(2, 2), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.save_trace_csv(dir.path().join("t.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,phase,actor_loss,critic_loss,critic_gap");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("2,convergence,"));
    report.save_json(dir.path().join("r.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["method"], "trajdeleter");
    assert_eq!(v["steps_used"], 4);
}
