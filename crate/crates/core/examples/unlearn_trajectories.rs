//! Trains a gridworld agent, draws a 5% forget set and removes it with
//! TrajDeleter and with the baselines, printing return and wall time.
//!
//! Writes the TrajDeleter per-step trace to `trajdeleter.trace.csv`.

use traj_unlearn::data::split_dataset;
use traj_unlearn::deleter::{run_method, Method, UnlearnConfig};
use traj_unlearn::envs::{collect_dataset, evaluate_policy, BehaviorSpec, Env};
use traj_unlearn::offline_rl::{train, Algo, TrainConfig};

fn main() -> traj_unlearn::Result<()> {
    let seed = 3;
    let env = Env::from_name("gridworld")?;
    let data = collect_dataset(&env, &BehaviorSpec::new(BehaviorSpec::parse_mixture("expert:0.5,medium:0.5")?, 500, seed)?)?;
    let cfg = TrainConfig {
        steps: 5000,
        ..TrainConfig::default()
    };
    let agent = train(Algo::Iql, &data, &cfg, seed)?;
    let split = split_dataset(&data, 0.05, seed)?;
    println!(
        "forgetting {} of {} trajectories; original return {:.3}",
        split.forget_ids.len(),
        data.len(),
        evaluate_policy(&agent, &env, 100, 1)?.mean_return
    );

    for method in [Method::Trajdeleter, Method::ForgettingOnly, Method::Finetune, Method::RandomReward] {
        let ucfg = UnlearnConfig {
            method,
            h: if method == Method::ForgettingOnly { 0 } else { 200 },
            ..UnlearnConfig::default()
        };
        let (unlearned, report) = run_method(&agent, &data, &split, &ucfg, seed)?;
        let ret = evaluate_policy(&unlearned, &env, 100, 1)?.mean_return;
        println!(
            "{:>16}: return {ret:.3}, {} steps in {:.2}s, critic gap {:?} -> {:?}",
            method.name(),
            report.steps_used,
            report.wall_time_seconds,
            report.critic_gap_start,
            report.critic_gap_end
        );
        if method == Method::Trajdeleter {
            report.save_trace_csv("trajdeleter.trace.csv")?;
        }
    }
    Ok(())
}
