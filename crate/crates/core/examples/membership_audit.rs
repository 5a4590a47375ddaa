//! Audits the forget set of a pointmass dataset against the original agent
//! and against an agent retrained without it. Fine-tuned shadow copies of
//! the original provide the reference distances.

use traj_unlearn::auditor::{audit_dataset, make_shadow_agents, precision_recall_f1, AuditConfig};
use traj_unlearn::data::{split_dataset, Trajectory};
use traj_unlearn::envs::{collect_dataset, BehaviorSpec, Env};
use traj_unlearn::offline_rl::{train, Algo, TrainConfig};

fn main() -> traj_unlearn::Result<()> {
    let seed = 1;
    let env = Env::from_name("pointmass")?;
    let data = collect_dataset(&env, &BehaviorSpec::new(BehaviorSpec::parse_mixture("expert:1.0")?, 200, seed)?)?;
    let split = split_dataset(&data, 0.05, seed)?;
    let cfg = TrainConfig {
        steps: 8000,
        ..TrainConfig::default()
    };
    let original = train(Algo::Td3bc, &data, &cfg, seed)?;
    let retrained = train(Algo::Td3bc, &data.select(&split.remain_ids)?, &cfg, seed + 1)?;

    let audit = AuditConfig {
        seed,
        ..AuditConfig::default()
    };
    let shadows = make_shadow_agents(&original, &data, &audit)?;
    let forget: Vec<&Trajectory> = split.forget_ids.iter().map(|&i| &data.trajectories[i]).collect();

    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (name, agent, member) in [("original", &original, true), ("retrained", &retrained, false)] {
        let summary = audit_dataset(agent, &shadows, &forget, &audit)?;
        println!("{name}: PPR {:.1}%", summary.ppr);
        for r in summary.records.iter().take(3) {
            let (m, s) = r.reference_mean_std();
            println!(
                "  trajectory {:>3}: d = {:.4}, reference {m:.4} +- {s:.4}, G = {:.2} vs {:.2} -> {}",
                r.trajectory_id,
                r.d_target,
                r.grubbs_statistic,
                r.grubbs_critical,
                r.verdict.name()
            );
        }
        predicted.extend(summary.verdicts());
        truth.extend(std::iter::repeat_n(member, forget.len()));
    }
    let scores = precision_recall_f1(&predicted, &truth)?;
    println!("precision {:.3} recall {:.3} F1 {:.3}", scores.precision, scores.recall, scores.f1);
    Ok(())
}
