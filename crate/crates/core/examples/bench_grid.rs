//! Runs a small bench grid (two seeds, three methods) on gridworld with
//! reduced training and writes `bench.csv`. Cached agents and finished
//! cells under the output directory are reused on the next run.

use traj_unlearn::deleter::Method;
use traj_unlearn::harness::{grid_cells, run_cells, write_bench_csv, BenchMethod, BenchOptions, ExperimentConfig};

fn main() -> traj_unlearn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bench-example".into());
    let mut cfg = ExperimentConfig::preset("gridworld")?;
    cfg.seeds = vec![1, 2];
    cfg.train.steps = 4000;
    cfg.audit.shadow_finetune_steps = 400;
    cfg.dm_audit_limit = 30;
    cfg.bench.methods = vec![
        BenchMethod::Original,
        BenchMethod::Unlearn(Method::Retrain),
        BenchMethod::Unlearn(Method::Trajdeleter),
    ];
    cfg.bench.ks = vec![160];
    cfg.unlearn.h = 40;

    let cells = grid_cells(&cfg);
    let opts = BenchOptions {
        jobs: 0,
        out_dir: Some(out.clone().into()),
        verbose: true,
    };
    let rows = run_cells(&cfg, &cells, &opts)?;
    for r in &rows {
        println!(
            "{:<12} seed {} PPR(D_f) {:5.1} PPR(D_m) {:5.1} return {:.3} {:.2}s",
            r.method.to_string(),
            r.seed,
            r.ppr_df,
            r.ppr_dm,
            r.mean_return,
            r.wall_time
        );
    }
    write_bench_csv(&rows, format!("{out}/bench.csv"))
}
