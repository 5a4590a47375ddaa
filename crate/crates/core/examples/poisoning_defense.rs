//! Poisons 5% of pointmass trajectories by scaling their actions, trains on
//! the poisoned data and unlearns the poisoned ids with TrajDeleter.

use traj_unlearn::data::{poison_actions, DatasetSplit};
use traj_unlearn::deleter::{run_method, UnlearnConfig};
use traj_unlearn::envs::{collect_dataset, evaluate_policy, BehaviorSpec, Env};
use traj_unlearn::offline_rl::{train, Algo, TrainConfig};

fn main() -> traj_unlearn::Result<()> {
    let seed = 2;
    let env = Env::from_name("pointmass")?;
    let clean = collect_dataset(&env, &BehaviorSpec::new(BehaviorSpec::parse_mixture("expert:1.0")?, 200, seed)?)?;
    let (poisoned, ids) = poison_actions(&clean, 0.05, 1.5, seed)?;
    println!("poisoned trajectories: {ids:?}");

    let cfg = TrainConfig {
        steps: 8000,
        ..TrainConfig::default()
    };
    let split = DatasetSplit::from_forget_ids(ids, poisoned.len(), 0.05, seed)?;
    let victim = train(Algo::Td3bc, &poisoned, &cfg, seed)?;
    let reference = train(Algo::Td3bc, &poisoned.select(&split.remain_ids)?, &cfg, seed)?;
    let (repaired, report) = run_method(&victim, &poisoned, &split, &UnlearnConfig::default(), seed)?;

    for (name, agent) in [("poisoned", &victim), ("clean retrain", &reference), ("trajdeleter", &repaired)] {
        let eval = evaluate_policy(agent, &env, 100, 5)?;
        println!("{name:>14}: return {:.3} +- {:.3}", eval.mean_return, eval.std_return);
    }
    println!("unlearning took {:.2}s", report.wall_time_seconds);
    Ok(())
}
