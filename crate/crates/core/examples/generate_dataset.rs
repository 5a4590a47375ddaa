//! Collects a mixed-quality gridworld dataset, prints its statistics and
//! writes it as JSON lines.
//!
//! ```bash
//! cargo run --release --example generate_dataset -- /tmp/grid.jsonl
//! ```

use traj_unlearn::data::{dataset_stats, load_dataset, save_dataset};
use traj_unlearn::envs::{collect_dataset, BehaviorSpec, Env};

fn main() -> traj_unlearn::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "gridworld.jsonl".into());
    let env = Env::from_name("gridworld")?;
    let spec = BehaviorSpec::new(BehaviorSpec::parse_mixture("expert:0.5,medium:0.5")?, 500, 1)?;
    let dataset = collect_dataset(&env, &spec)?;

    let stats = dataset_stats(&dataset)?;
    println!(
        "{} trajectories, {} transitions, mean return {:.3}, rewards in [{}, {}]",
        stats.n_trajectories, stats.n_transitions, stats.mean_return, stats.r_min, stats.r_max
    );
    let experts = dataset.trajectories.iter().filter(|t| t.behavior.as_deref() == Some("expert")).count();
    println!("{experts} expert episodes, {} medium", dataset.len() - experts);

    save_dataset(&dataset, &path)?;
    assert_eq!(load_dataset(&path)?, dataset);
    println!("wrote {path}");
    Ok(())
}
