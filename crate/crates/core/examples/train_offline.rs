//! Trains IQL on gridworld data and TD3+BC on pointmass data, then
//! evaluates both greedy policies.
//!
//! The step count defaults to 5000; pass `20000` for the full schedule.

use traj_unlearn::envs::{collect_dataset, evaluate_policy, random_actor, BehaviorSpec, Env};
use traj_unlearn::offline_rl::{train_with_progress, Algo, TrainConfig};

fn main() -> traj_unlearn::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    for (name, mix, episodes, algo) in [
        ("gridworld", "expert:0.5,medium:0.5", 500, Algo::Iql),
        ("pointmass", "expert:1.0", 200, Algo::Td3bc),
    ] {
        let env = Env::from_name(name)?;
        let data = collect_dataset(&env, &BehaviorSpec::new(BehaviorSpec::parse_mixture(mix)?, episodes, 7)?)?;
        let agent = train_with_progress(algo, &data, &cfg, 7, &mut |_, p| {
            println!("  {name} step {:>6} critic {:.5} actor {:.5}", p.step, p.critic_loss, p.actor_loss);
        })?;
        let trained = evaluate_policy(&agent, &env, 100, 99)?;
        let random = evaluate_policy(&random_actor(&env), &env, 100, 99)?;
        println!(
            "{name} {}: return {:.3} +- {:.3} (random {:.3})",
            algo.name(),
            trained.mean_return,
            trained.std_return,
            random.mean_return
        );
    }
    Ok(())
}
