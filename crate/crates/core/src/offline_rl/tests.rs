use std::collections::HashMap;

use ndarray::Array2;
use rand::SeedableRng;

use super::*;
use crate::approx::{Activation, CategoricalPolicy, Network, PolicyHead};
use crate::data::testutil::random_dataset;
use crate::envs::{collect_dataset, value_iteration_oracle, BehaviorSpec, Env, GridWorld};

fn tiny_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        hidden: vec![8],
        log_every: 5,
        ..TrainConfig::default()
    }
}

fn grid_data(episodes: usize, seed: u64) -> OfflineDataset {
    let env = Env::from_name("gridworld").unwrap();
    let mix = BehaviorSpec::parse_mixture("expert:0.5,medium:0.5").unwrap();
    collect_dataset(&env, &BehaviorSpec::new(mix, episodes, seed).unwrap()).unwrap()
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { steps: 0, ..TrainConfig::default() },
        TrainConfig { expectile: 1.0, ..TrainConfig::default() },
        TrainConfig { beta: -1.0, ..TrainConfig::default() },
        TrainConfig { tau: 0.0, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let parsed: TrainConfig = toml::from_str("steps = 5\nhidden = [4]").unwrap();
    assert_eq!((parsed.steps, parsed.hidden.clone(), parsed.batch_size), (5, vec![4], 256));
    assert!(toml::from_str::<TrainConfig>("stepz = 5").is_err());
}

#[test]
fn training_is_deterministic() {
    for (algo, discrete) in [(Algo::Iql, true), (Algo::Iql, false), (Algo::Td3bc, false)] {
        let ds = random_dataset(11, 6, discrete);
        let a = train(algo, &ds, &tiny_cfg(20), 3).unwrap();
        let b = train(algo, &ds, &tiny_cfg(20), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_steps, 20);
        let c = train(algo, &ds, &tiny_cfg(20), 4).unwrap();
        assert_ne!(a.policy, c.policy);
    }
}

#[test]
fn td3bc_rejects_discrete_and_empty() {
    let ds = random_dataset(1, 4, true);
    assert!(matches!(train_td3bc(&ds, &tiny_cfg(5), 0), Err(Error::Incompatible(_))));
    let empty = random_dataset(1, 4, false).empty_like();
    assert!(train_iql(&empty, &tiny_cfg(5), 0).is_err());
}

#[test]
fn progress_rows_every_window() {
    let ds = random_dataset(2, 5, false);
    let mut rows = Vec::new();
    train_with_progress(Algo::Td3bc, &ds, &tiny_cfg(12), 0, &mut |_, r| rows.push(r.clone())).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![5, 10, 12]);
    assert!(rows.iter().all(|r| r.critic_loss.is_finite() && r.actor_loss.is_finite()));
}

#[test]
fn finetune_identity_and_determinism() {
    let ds = random_dataset(5, 6, true);
    let agent = train_iql(&ds, &tiny_cfg(10), 1).unwrap();
    assert_eq!(finetune(&agent, &ds, 0, 9).unwrap(), agent);
    let a = finetune(&agent, &ds, 7, 9).unwrap();
    let b = finetune(&agent, &ds, 7, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train_steps, 17);
    assert_ne!(a.critics, agent.critics);
    let other = random_dataset(5, 3, false);
    assert!(matches!(finetune(&agent, &other, 1, 0), Err(Error::Incompatible(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (algo, discrete) in [(Algo::Iql, true), (Algo::Td3bc, false)] {
        let ds = random_dataset(8, 4, discrete);
        let agent = train(algo, &ds, &tiny_cfg(6), 2).unwrap();
        let path = dir.path().join(format!("{algo}.json"));
        save_agent(&agent, &path).unwrap();
        assert_eq!(load_agent(&path).unwrap(), agent);

        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["algo", "state_dim", "action_spec", "norm_mean", "norm_std", "policy", "critics", "log_std"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["meta"]["steps"], 6);
        assert_eq!(v["meta"]["seed"], 2);
        v["norm_std"][0] = serde_json::json!(0.0);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(load_agent(&path), Err(Error::Format { .. })));
    }
    assert!(matches!(load_agent(dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn polyak_helper() {
    let mut t = Network::<f32>::zeros(&[2, 2], Activation::Tanh).unwrap();
    let mut o = t.clone();
    o.params_mut().iter_mut().for_each(|p| *p = 2.0);
    polyak_update(&mut t, &o, 0.5).unwrap();
    assert!(t.params().iter().all(|&p| p == 1.0));
    assert!(polyak_update(&mut t, &o, 0.0).is_err());
}

/// Near-deterministic categorical policy that follows the oracle's argmax.
fn oracle_policy(grid: &GridWorld) -> PolicyHead {
    let q = value_iteration_oracle(grid, GAMMA);
    let mut w = Array2::<f32>::zeros((grid.n_cells(), 4));
    for (cell, row) in q.iter().enumerate() {
        w[[cell, crate::envs::gridworld_argmax(row)]] = 30.0;
    }
    PolicyHead::Categorical(CategoricalPolicy {
        logit_net: Network::from_layers(vec![(w, vec![0.0; 4])], vec![]).unwrap(),
    })
}

#[test]
fn critic_reaches_oracle_fixed_point() {
    let grid = GridWorld::default();
    let ds = grid_data(300, 4);
    let policy = oracle_policy(&grid);
    let pool = TransitionPool::<f32>::new(&ds, None, &NormStats::identity(ds.state_dim)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut critic = Critic::new(25, CriticKind::Discrete(4), &[64, 64], Activation::Tanh, &mut rng).unwrap();
    let td = fit_critic(&mut critic, &policy, &pool, 4000, 256, 1e-3, 0.02, GAMMA, 1).unwrap();
    assert!(td < 1e-3, "mean TD loss {td}");

    let oracle = value_iteration_oracle(&grid, GAMMA);
    let mut visits: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &ds.trajectories {
        for (s, a) in t.states.iter().zip(&t.actions) {
            *visits.entry((grid.decode(s), a.as_discrete().unwrap())).or_default() += 1;
        }
    }
    let mut checked = 0;
    for (&(cell, a), &n) in &visits {
        if n >= 10 {
            let (x, y) = grid.coords(cell);
            let q = critic.q_all(NormStats::identity(25).apply::<f32>(&[grid.encode(x, y)]).view()).unwrap();
            let err = (q[[0, a]] as f64 - oracle[cell][a]).abs();
            assert!(err < 0.05, "cell {cell} action {a}: {} vs {}", q[[0, a]], oracle[cell][a]);
            checked += 1;
        }
    }
    assert!(checked > 20, "only {checked} well-visited pairs");
}
