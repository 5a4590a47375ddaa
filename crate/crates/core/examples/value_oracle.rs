//! Fits a critic to the value-iteration policy on gridworld data and
//! compares it with the tabular oracle on well-visited pairs.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traj_unlearn::approx::{Activation, CategoricalPolicy, Network, PolicyHead};
use traj_unlearn::envs::{
    collect_dataset, gridworld_argmax, value_iteration_oracle, BehaviorSpec, Env, GridWorld, GAMMA,
};
use traj_unlearn::offline_rl::{fit_critic, Critic, CriticKind, NormStats, TransitionPool};

fn main() -> traj_unlearn::Result<()> {
    let grid = GridWorld::default();
    let env = Env::GridWorld(grid.clone());
    let oracle = value_iteration_oracle(&grid, GAMMA);
    println!("V*(start) = {:.5}", oracle[0].iter().copied().fold(f64::MIN, f64::max));

    // near-deterministic greedy policy over the oracle
    let mut logits = Array2::<f32>::zeros((grid.n_cells(), 4));
    for (cell, row) in oracle.iter().enumerate() {
        logits[[cell, gridworld_argmax(row)]] = 30.0;
    }
    let policy = PolicyHead::Categorical(CategoricalPolicy {
        logit_net: Network::from_layers(vec![(logits, vec![0.0; 4])], vec![])?,
    });

    let data = collect_dataset(&env, &BehaviorSpec::new(BehaviorSpec::parse_mixture("expert:0.5,medium:0.5")?, 300, 4)?)?;
    let norm = NormStats::identity(data.state_dim);
    let pool = TransitionPool::<f32>::new(&data, None, &norm)?;
    let mut critic = Critic::new(grid.n_cells(), CriticKind::Discrete(4), &[64, 64], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0))?;
    let td = fit_critic(&mut critic, &policy, &pool, 4000, 256, 1e-3, 0.02, GAMMA, 1)?;
    println!("final TD loss {td:.2e}");

    let mut visits: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in &data.trajectories {
        for (s, a) in t.states.iter().zip(&t.actions) {
            *visits.entry((grid.decode(s), a.as_discrete().unwrap())).or_default() += 1;
        }
    }
    for (&(cell, a), &n) in visits.iter().filter(|(_, &n)| n >= 50) {
        let (x, y) = grid.coords(cell);
        let q = critic.q_all(norm.apply::<f32>(&[grid.encode(x, y)]).view())?;
        println!("cell ({x},{y}) action {a}: {n:>4} visits, Q {:.4}, oracle {:.4}", q[[0, a]], oracle[cell][a]);
    }
    Ok(())
}
