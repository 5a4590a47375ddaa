use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BenchMethod, BenchPreset, ExperimentConfig};
use super::report::save_json;
use crate::auditor::{audit_dataset, make_shadow_agents, AuditConfig};
use crate::data::io::write_atomic;
use crate::data::{load_dataset, poison_actions, save_dataset, split_dataset, DatasetSplit, OfflineDataset, Trajectory};
use crate::deleter::{run_method, Method, UnlearnConfig, UnlearnReport};
use crate::envs::{collect_dataset, evaluate_policy};
use crate::error::{Error, Result};
use crate::offline_rl::{load_agent, save_agent, train, Agent};

/// Evaluation episodes use seeds disjoint from data collection.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// One grid point for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: BenchMethod,
    pub rate: f64,
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl BenchCell {
    pub fn key(&self) -> String {
        format!("{}-r{}-k{}-l{}-s{}", self.method, self.rate, self.k, self.lambda, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub env: String,
    pub method: BenchMethod,
    pub rate: f64,
    pub k: usize,
    pub h: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Percent of forget-set trajectories audited as members.
    pub ppr_df: f64,
    pub ppr_dm: f64,
    pub mean_return: f64,
    pub wall_time: f64,
    pub steps_used: usize,
    /// `ok` or `error: <message>`.
    pub status: String,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(env: &str, cell: &BenchCell, h: usize, err: &Error) -> Self {
        BenchRow {
            env: env.to_string(),
            method: cell.method,
            rate: cell.rate,
            k: cell.k,
            h,
            lambda: cell.lambda,
            seed: cell.seed,
            ppr_df: f64::NAN,
            ppr_dm: f64::NAN,
            mean_return: f64::NAN,
            wall_time: f64::NAN,
            steps_used: 0,
            status: format!("error: {err}"),
        }
    }
}

/// Cartesian product of the configured grid over all seeds. The poisoning
/// preset replaces the rate axis by the poisoned fraction.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<BenchCell> {
    let rates = match cfg.bench.preset {
        BenchPreset::Grid => cfg.bench.rates.clone(),
        BenchPreset::Poisoning => vec![cfg.bench.poison_fraction],
    };
    let mut cells = Vec::new();
    for &method in &cfg.bench.methods {
        for &rate in &rates {
            for &k in &cfg.bench.ks {
                for &lambda in &cfg.bench.lambdas {
                    for &seed in &cfg.seeds {
                        cells.push(BenchCell {
                            method,
                            rate,
                            k,
                            lambda,
                            seed,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Artifacts shared by every cell of one seed.
pub struct SeedBase {
    pub seed: u64,
    pub dataset: OfflineDataset,
    /// Poisoned trajectory ids (poisoning preset only).
    pub poisoned_ids: Option<Vec<usize>>,
    pub original: Agent,
    pub train_seconds: f64,
    pub shadows: Vec<Agent>,
}

impl SeedBase {
    pub fn split(&self, rate: f64) -> Result<DatasetSplit> {
        match &self.poisoned_ids {
            Some(ids) => DatasetSplit::from_forget_ids(ids.clone(), self.dataset.len(), rate, self.seed),
            None => split_dataset(&self.dataset, rate, self.seed),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Timing {
    seconds: f64,
}

/// Loads `path` through `load` if it exists, otherwise computes and saves.
fn cached<T>(
    path: Option<PathBuf>,
    load: impl FnOnce(&Path) -> Result<T>,
    compute: impl FnOnce() -> Result<T>,
    save: impl FnOnce(&T, &Path) -> Result<()>,
) -> Result<T> {
    match path {
        Some(p) if p.exists() => load(&p),
        Some(p) => {
            let value = compute()?;
            save(&value, &p)?;
            Ok(value)
        }
        None => compute(),
    }
}

fn timed_agent(
    path: Option<PathBuf>,
    compute: impl FnOnce() -> Result<Agent>,
) -> Result<(Agent, f64)> {
    let timing = |p: &Path| p.with_extension("time.json");
    cached(
        path,
        |p| {
            let t: Timing = read_json(&timing(p))?;
            Ok((load_agent(p)?, t.seconds))
        },
        || {
            let start = Instant::now();
            let agent = compute()?;
            Ok((agent, start.elapsed().as_secs_f64()))
        },
        |(agent, secs), p| {
            save_agent(agent, p)?;
            save_json(timing(p), &Timing { seconds: *secs })
        },
    )
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Dataset (poisoned for the poisoning preset), original agent and shadows
/// for one seed, cached under `dir` when given.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedBase> {
    let env = cfg.env()?;
    let at = |name: String| dir.map(|d| d.join(name));
    let clean = cached(
        at(format!("data/seed{seed}.jsonl")),
        |p| load_dataset(p),
        || collect_dataset(&env, &cfg.behavior(seed)?),
        |d, p| save_dataset(d, p),
    )?;
    let (dataset, poisoned_ids) = match cfg.bench.preset {
        BenchPreset::Grid => (clean, None),
        BenchPreset::Poisoning => {
            let (d, ids) = poison_actions(&clean, cfg.bench.poison_fraction, cfg.bench.poison_factor, seed)?;
            (d, Some(ids))
        }
    };
    let (original, train_seconds) =
        timed_agent(at(format!("agents/original-seed{seed}.json")), || train(cfg.algo, &dataset, &cfg.train, seed))?;
    let audit = audit_config(cfg, seed);
    let shadows = match dir {
        Some(d) => {
            let paths: Vec<PathBuf> =
                (0..audit.n_shadows).map(|i| d.join(format!("agents/shadow-seed{seed}-{i}.json"))).collect();
            if paths.iter().all(|p| p.exists()) {
                paths.iter().map(load_agent).collect::<Result<Vec<_>>>()?
            } else {
                let shadows = make_shadow_agents(&original, &dataset, &audit)?;
                for (s, p) in shadows.iter().zip(&paths) {
                    save_agent(s, p)?;
                }
                shadows
            }
        }
        None => make_shadow_agents(&original, &dataset, &audit)?,
    };
    Ok(SeedBase {
        seed,
        dataset,
        poisoned_ids,
        original,
        train_seconds,
        shadows,
    })
}

pub fn audit_config(cfg: &ExperimentConfig, seed: u64) -> AuditConfig {
    AuditConfig { seed, ..cfg.audit.clone() }
}

/// Unlearning settings of a cell: K and lambda from the grid, the rest from
/// the config.
pub fn cell_unlearn_config(cfg: &ExperimentConfig, cell: &BenchCell) -> Option<UnlearnConfig> {
    match cell.method {
        BenchMethod::Original => None,
        BenchMethod::Unlearn(method) => Some(UnlearnConfig {
            method,
            k: cell.k,
            lambda: cell.lambda,
            ..cfg.unlearn.clone()
        }),
    }
}

/// Convergence steps a cell's method actually runs (0 for retraining).
fn cell_h(cfg: &ExperimentConfig, cell: &BenchCell) -> usize {
    match cell_unlearn_config(cfg, cell) {
        Some(u) if u.method != Method::Retrain => u.convergence_steps(),
        _ => 0,
    }
}

/// Remaining-set trajectories to audit: a seeded subset of at most `limit`.
pub fn dm_audit_ids(split: &DatasetSplit, limit: usize, seed: u64) -> Vec<usize> {
    let mut ids = split.remain_ids.clone();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(limit);
    ids.sort_unstable();
    ids
}

fn compute_cell(
    cfg: &ExperimentConfig,
    base: &SeedBase,
    cell: &BenchCell,
    retrained: Option<&(Agent, UnlearnReport)>,
) -> Result<BenchRow> {
    let split = base.split(cell.rate)?;
    let ucfg = cell_unlearn_config(cfg, cell);
    let (agent, report) = match (&ucfg, retrained) {
        (None, _) => (base.original.clone(), None),
        (Some(u), Some(r)) if u.method == Method::Retrain => (r.0.clone(), Some(r.1.clone())),
        (Some(u), _) => {
            u.validate()?;
            cfg.check_unlearn_budget(u, base.original.config.steps)?;
            let (a, r) = run_method(&base.original, &base.dataset, &split, u, cell.seed)?;
            (a, Some(r))
        }
    };
    let audit = audit_config(cfg, cell.seed);
    let pick = |ids: &[usize]| -> Vec<&Trajectory> { ids.iter().map(|&i| &base.dataset.trajectories[i]).collect() };
    let df = audit_dataset(&agent, &base.shadows, &pick(&split.forget_ids), &audit)?;
    let dm_ids = dm_audit_ids(&split, cfg.dm_audit_limit, cell.seed);
    let ppr_dm = if dm_ids.is_empty() {
        f64::NAN
    } else {
        audit_dataset(&agent, &base.shadows, &pick(&dm_ids), &audit)?.ppr
    };
    let eval = evaluate_policy(&agent, &cfg.env()?, cfg.eval_episodes, EVAL_SEED_OFFSET + cell.seed)?;
    Ok(BenchRow {
        env: cfg.env.clone(),
        method: cell.method,
        rate: cell.rate,
        k: cell.k,
        h: cell_h(cfg, cell),
        lambda: cell.lambda,
        seed: cell.seed,
        ppr_df: df.ppr,
        ppr_dm,
        mean_return: eval.mean_return,
        wall_time: report.as_ref().map_or(0.0, |r| r.wall_time_seconds),
        steps_used: report.as_ref().map_or(0, |r| r.steps_used),
        status: "ok".into(),
    })
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Artifact and per-cell cache directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

/// Runs `cells`, reusing cached cell results, and returns one row per cell
/// in input order. Failing cells get an error status; the rest still run.
pub fn run_cells(cfg: &ExperimentConfig, cells: &[BenchCell], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let dir = opts.out_dir.as_deref();
    if let Some(d) = dir {
        for sub in ["data", "agents", "cells"] {
            std::fs::create_dir_all(d.join(sub)).map_err(|e| Error::io(d.join(sub), e))?;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_cells_inner(cfg, cells, dir, opts.verbose))
}

fn run_cells_inner(cfg: &ExperimentConfig, cells: &[BenchCell], dir: Option<&Path>, verbose: bool) -> Result<Vec<BenchRow>> {
    let cell_path = |c: &BenchCell| dir.map(|d| d.join("cells").join(format!("{}.json", c.key())));
    let mut rows: Vec<Option<BenchRow>> = cells
        .iter()
        .map(|c| cell_path(c).filter(|p| p.exists()).and_then(|p| read_json(&p).ok()))
        .collect();

    let pending: Vec<usize> = (0..cells.len()).filter(|&i| rows[i].is_none()).collect();
    let seeds: BTreeSet<u64> = pending.iter().map(|&i| cells[i].seed).collect();
    let bases: BTreeMap<u64, std::result::Result<SeedBase, String>> = seeds
        .into_par_iter()
        .map(|s| {
            let t = Instant::now();
            let base = prepare_seed(cfg, s, dir).map_err(|e| e.to_string());
            if verbose {
                eprintln!("[bench] {} seed {s} prepared in {:.1}s", cfg.env, t.elapsed().as_secs_f64());
            }
            (s, base)
        })
        .collect();

    let retrain_keys: BTreeSet<(u64, u64)> = pending
        .iter()
        .map(|&i| &cells[i])
        .filter(|c| c.method == BenchMethod::Unlearn(Method::Retrain))
        .map(|c| (c.rate.to_bits(), c.seed))
        .collect();
    let retrained: BTreeMap<(u64, u64), std::result::Result<(Agent, UnlearnReport), String>> = retrain_keys
        .into_par_iter()
        .map(|(rate_bits, seed)| {
            let rate = f64::from_bits(rate_bits);
            let result = match &bases[&seed] {
                Ok(base) => retrain_cached(cfg, base, rate, dir).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            ((rate_bits, seed), result)
        })
        .collect();

    let computed: Vec<(usize, BenchRow)> = pending
        .into_par_iter()
        .map(|i| {
            let cell = &cells[i];
            let h = cell_h(cfg, cell);
            let t = Instant::now();
            let result = match &bases[&cell.seed] {
                Err(e) => Err(Error::InvalidArgument(format!("seed setup failed: {e}"))),
                Ok(base) => match retrained.get(&(cell.rate.to_bits(), cell.seed)) {
                    Some(Err(e)) => Err(Error::InvalidArgument(format!("retraining failed: {e}"))),
                    r => compute_cell(cfg, base, cell, r.and_then(|r| r.as_ref().ok())),
                },
            };
            let row = match result {
                Ok(row) => {
                    if let Some(p) = cell_path(cell) {
                        if let Err(e) = save_json(&p, &row) {
                            return (i, BenchRow::failed(&cfg.env, cell, h, &e));
                        }
                    }
                    row
                }
                Err(e) => BenchRow::failed(&cfg.env, cell, h, &e),
            };
            if verbose {
                eprintln!("[bench] {} {} {} in {:.1}s", cfg.env, cell.key(), row.status, t.elapsed().as_secs_f64());
            }
            (i, row)
        })
        .collect();
    for (i, row) in computed {
        rows[i] = Some(row);
    }
    Ok(rows.into_iter().map(|r| r.expect("every cell has a row")).collect())
}

fn retrain_cached(cfg: &ExperimentConfig, base: &SeedBase, rate: f64, dir: Option<&Path>) -> Result<(Agent, UnlearnReport)> {
    let split = base.split(rate)?;
    let ucfg = UnlearnConfig {
        method: Method::Retrain,
        ..cfg.unlearn.clone()
    };
    let path = dir.map(|d| d.join(format!("agents/retrain-r{rate}-seed{}.json", base.seed)));
    let report_path = |p: &Path| p.with_extension("unlearn.json");
    cached(
        path,
        |p| Ok((load_agent(p)?, read_json(&report_path(p))?)),
        || run_method(&base.original, &base.dataset, &split, &ucfg, base.seed),
        |(agent, report), p| {
            save_agent(agent, p)?;
            report.save_json(report_path(p))
        },
    )
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub const BENCH_HEADER: &str = "env,method,rate,k,h,lambda,seed,ppr_df,ppr_dm,mean_return,wall_time,steps_used,status";

pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| {
        writeln!(w, "{BENCH_HEADER}")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
                r.env,
                r.method,
                r.rate,
                r.k,
                r.h,
                r.lambda,
                r.seed,
                csv_num(r.ppr_df),
                csv_num(r.ppr_dm),
                csv_num(r.mean_return),
                csv_num(r.wall_time),
                r.steps_used,
                r.status.replace('"', "'")
            )?;
        }
        Ok(())
    })
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
