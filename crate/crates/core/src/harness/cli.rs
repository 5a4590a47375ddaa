use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::bench::{grid_cells, run_cells, write_bench_csv, BenchOptions, EVAL_SEED_OFFSET};
use super::config::ExperimentConfig;
use super::report::{report_path, RunReport};
use crate::auditor::{audit_dataset, make_shadow_agents, precision_recall_f1, AuditReport};
use crate::data::io::write_atomic;
use crate::data::{load_dataset, load_split, save_dataset, save_split, split_dataset, split_dataset_in_stratum, DatasetSplit, Trajectory};
use crate::deleter::{run_method, Method};
use crate::envs::{collect_dataset, evaluate_policy, Env, EvalReport};
use crate::error::{Error, Result};
use crate::offline_rl::{load_agent, save_agent, train_with_progress, Agent, Algo};

#[derive(Debug, Parser)]
#[command(name = "trajctl", version, about = "Offline RL training, trajectory unlearning and membership auditing")]
pub struct Cli {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (directory for `bench`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect an offline dataset with a behavior mixture.
    GenData(GenDataArgs),
    /// Train an agent on a dataset.
    Train(TrainArgs),
    /// Remove a forget set from a trained agent.
    Unlearn(UnlearnArgs),
    /// Audit trajectories against a target agent.
    Audit(AuditArgs),
    /// Evaluate an agent's return in its environment.
    Eval(EvalArgs),
    /// Run the configured method/rate/K/lambda grid over seeds.
    Bench,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: Option<String>,
    /// e.g. expert:0.5,medium:0.5
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Evaluation episodes per progress row (0 disables).
    #[arg(long, default_value_t = 10)]
    pub eval_episodes: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; when absent a split is drawn with --rate and --seed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// Draw the forget set only from episodes of this behavior policy.
    #[arg(long)]
    pub stratum: Option<String>,
}

#[derive(Debug, Args)]
pub struct UnlearnArgs {
    #[arg(long)]
    pub agent: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Forget,
    Remain,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Label {
    /// Audited trajectories were in the target's training data.
    In,
    /// Audited trajectories were not.
    Out,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Agent under audit.
    #[arg(long)]
    pub agent: PathBuf,
    /// Agent trained on the full dataset; shadows are fine-tuned from it.
    #[arg(long)]
    pub original: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Subset::Forget)]
    pub subset: Subset,
    /// Ground truth for precision/recall/F1.
    #[arg(long, value_enum)]
    pub label: Option<Label>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required<'a>(out: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    out.as_deref().ok_or_else(|| Error::Usage(format!("--out is required for {what}")))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn run(cli: &Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(base.seeds[0]);
    match &cli.command {
        Command::GenData(a) => gen_data(cli, base, seed, a),
        Command::Train(a) => train_cmd(cli, base, seed, a),
        Command::Unlearn(a) => unlearn_cmd(cli, base, seed, a),
        Command::Audit(a) => audit_cmd(cli, base, seed, a),
        Command::Eval(a) => eval_cmd(cli, base, seed, a),
        Command::Bench => bench_cmd(cli, base),
    }
}

/// Switches to the environment's preset unless a config file fixed it.
fn for_env(cli: &Cli, cfg: ExperimentConfig, env: &str) -> Result<ExperimentConfig> {
    if cli.config.is_none() && cfg.env != env {
        ExperimentConfig::preset(env)
    } else if cfg.env != env {
        Err(Error::Incompatible(format!("config is for {}, input is {env}", cfg.env)))
    } else {
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct GenDataResult {
    trajectories: usize,
    transitions: usize,
    mean_return: f64,
}

fn gen_data(cli: &Cli, mut cfg: ExperimentConfig, seed: u64, a: &GenDataArgs) -> Result<()> {
    if let Some(env) = &a.env {
        Env::from_name(env)?;
        cfg = for_env(cli, cfg, env)?;
    }
    if let Some(mix) = &a.mix {
        cfg.mix = mix.clone();
    }
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    cfg.seeds = vec![seed];
    // flag values that make no valid behavior spec are usage errors
    cfg.behavior(seed).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Usage(m),
        e => e,
    })?;
    cfg.validate()?;
    let out = required(&cli.out, "gen-data")?;
    ensure_parent(out)?;
    let ds = collect_dataset(&cfg.env()?, &cfg.behavior(seed)?)?;
    save_dataset(&ds, out)?;
    let result = GenDataResult {
        trajectories: ds.len(),
        transitions: ds.num_transitions(),
        mean_return: ds.trajectories.iter().map(Trajectory::undiscounted_return).sum::<f64>() / ds.len().max(1) as f64,
    };
    println!("wrote {} trajectories ({} transitions) to {}", result.trajectories, result.transitions, out.display());
    RunReport::new("gen-data", &cfg, result)?.output(out).save(report_path(out))
}

fn train_cmd(cli: &Cli, cfg: ExperimentConfig, seed: u64, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let mut cfg = for_env(cli, cfg, &ds.env_name)?;
    if let Some(algo) = a.algo {
        cfg.algo = algo;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let out = required(&cli.out, "train")?;
    ensure_parent(out)?;
    let env = Env::from_name(&ds.env_name)?;
    let mut progress = Vec::new();
    let mut eval_err = None;
    let start = std::time::Instant::now();
    let agent = train_with_progress(cfg.algo, &ds, &cfg.train, seed, &mut |agent, row| {
        let ret = if a.eval_episodes > 0 {
            match evaluate_policy(agent, &env, a.eval_episodes, EVAL_SEED_OFFSET + seed) {
                Ok(r) => r.mean_return,
                Err(e) => {
                    eval_err.get_or_insert(e);
                    f64::NAN
                }
            }
        } else {
            f64::NAN
        };
        progress.push((row.step, row.critic_loss, row.actor_loss, ret));
    })?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(e) = eval_err {
        return Err(e);
    }
    save_agent(&agent, out)?;
    let progress_path = with_suffix(out, ".progress.csv");
    write_atomic(&progress_path, |w| {
        writeln!(w, "step,critic_loss,actor_loss,eval_return")?;
        for (s, c, act, r) in &progress {
            let f = |v: &f64| if v.is_finite() { v.to_string() } else { String::new() };
            writeln!(w, "{s},{},{},{}", f(c), f(act), f(r))?;
        }
        Ok(())
    })?;
    println!("trained {} for {} steps in {seconds:.1}s -> {}", cfg.algo, agent.train_steps, out.display());
    #[derive(Serialize)]
    struct TrainResult {
        steps: usize,
        wall_time_seconds: f64,
    }
    RunReport::new("train", &cfg, TrainResult { steps: agent.train_steps, wall_time_seconds: seconds })?
        .input(&a.data)?
        .output(out)
        .output(&progress_path)
        .save(report_path(out))
}

/// Split from file, or drawn with `--rate` (config rate when absent).
fn resolve_split(s: &SplitArgs, cfg: &ExperimentConfig, n: usize, ds: &crate::data::OfflineDataset, seed: u64) -> Result<(DatasetSplit, bool)> {
    match &s.split {
        Some(p) => Ok((load_split(p, n)?, false)),
        None => {
            let rate = s.rate.unwrap_or(cfg.unlearning_rate);
            let split = match &s.stratum {
                Some(b) => split_dataset_in_stratum(ds, rate, seed, b)?,
                None => split_dataset(ds, rate, seed)?,
            };
            Ok((split, true))
        }
    }
}

fn load_pair(agent: &Path, data: &Path) -> Result<(Agent, crate::data::OfflineDataset)> {
    let agent = load_agent(agent)?;
    let ds = load_dataset(data)?;
    agent.check_compatible(&ds)?;
    Ok((agent, ds))
}

fn unlearn_cmd(cli: &Cli, cfg: ExperimentConfig, seed: u64, a: &UnlearnArgs) -> Result<()> {
    let (agent, ds) = load_pair(&a.agent, &a.split.data)?;
    let mut cfg = for_env(cli, cfg, &ds.env_name)?;
    let u = &mut cfg.unlearn;
    if let Some(m) = a.method {
        u.method = m;
    }
    if let Some(k) = a.k {
        u.k = k;
    }
    if let Some(h) = a.h {
        u.h = h;
    }
    if let Some(l) = a.lambda {
        u.lambda = l;
    }
    u.validate()?;
    cfg.check_unlearn_budget(&cfg.unlearn, agent.config.steps)?;
    let out = required(&cli.out, "unlearn")?;
    ensure_parent(out)?;
    let (split, drawn) = resolve_split(&a.split, &cfg, ds.len(), &ds, seed)?;
    let env = Env::from_name(&ds.env_name)?;
    let (unlearned, mut report) = run_method(&agent, &ds, &split, &cfg.unlearn, seed)?;
    report.pre_return = Some(evaluate_policy(&agent, &env, cfg.eval_episodes, EVAL_SEED_OFFSET + seed)?.mean_return);
    report.post_return = Some(evaluate_policy(&unlearned, &env, cfg.eval_episodes, EVAL_SEED_OFFSET + seed)?.mean_return);
    save_agent(&unlearned, out)?;
    let trace = with_suffix(out, ".trace.csv");
    report.save_trace_csv(&trace)?;
    let mut run = RunReport::new("unlearn", &cfg, &report)?.input(&a.agent)?.input(&a.split.data)?;
    if let Some(p) = &a.split.split {
        run = run.input(p)?;
    }
    if drawn {
        let split_path = with_suffix(out, ".split.json");
        save_split(&split, &split_path)?;
        run = run.output(split_path);
    }
    println!(
        "{}: {} steps in {:.2}s, return {:.3} -> {:.3}",
        report.method.name(),
        report.steps_used,
        report.wall_time_seconds,
        report.pre_return.unwrap_or(f64::NAN),
        report.post_return.unwrap_or(f64::NAN)
    );
    run.output(out).output(&trace).save(report_path(out))
}

fn audit_cmd(cli: &Cli, cfg: ExperimentConfig, seed: u64, a: &AuditArgs) -> Result<()> {
    let (target, ds) = load_pair(&a.agent, &a.split.data)?;
    let original = load_agent(&a.original)?;
    original.check_compatible(&ds)?;
    let mut cfg = for_env(cli, cfg, &ds.env_name)?;
    cfg.audit.seed = seed;
    cfg.audit.validate()?;
    let out = required(&cli.out, "audit")?;
    ensure_parent(out)?;
    let (split, _) = resolve_split(&a.split, &cfg, ds.len(), &ds, seed)?;
    let ids: Vec<usize> = match a.subset {
        Subset::Forget => split.forget_ids.clone(),
        Subset::Remain => split.remain_ids.clone(),
        Subset::All => (0..ds.len()).collect(),
    };
    let trajectories: Vec<&Trajectory> = ids.iter().map(|&i| &ds.trajectories[i]).collect();
    let shadows = make_shadow_agents(&original, &ds, &cfg.audit)?;
    let summary = audit_dataset(&target, &shadows, &trajectories, &cfg.audit)?;
    summary.save_csv(out)?;
    let scores = match a.label {
        Some(label) => {
            let truth = vec![label == Label::In; summary.records.len()];
            Some(precision_recall_f1(&summary.verdicts(), &truth)?)
        }
        None => None,
    };
    let result = AuditReport {
        ppr: summary.ppr,
        n_trajectories: summary.records.len(),
        scores,
    };
    println!("audited {} trajectories: PPR {:.1}%", result.n_trajectories, result.ppr);
    let mut run = RunReport::new("audit", &cfg, result)?
        .input(&a.agent)?
        .input(&a.original)?
        .input(&a.split.data)?;
    if let Some(p) = &a.split.split {
        run = run.input(p)?;
    }
    run.output(out).save(report_path(out))
}

fn eval_cmd(cli: &Cli, cfg: ExperimentConfig, seed: u64, a: &EvalArgs) -> Result<()> {
    let agent = load_agent(&a.agent)?;
    let episodes = a.episodes.unwrap_or(cfg.eval_episodes);
    let env_name = env_of(&agent)?;
    let env = Env::from_name(env_name)?;
    let report: EvalReport = evaluate_policy(&agent, &env, episodes, seed)?;
    println!(
        "{env_name}: mean return {:.4} (std {:.4}) over {} episodes",
        report.mean_return, report.std_return, report.episodes
    );
    let out = cli.out.clone().unwrap_or_else(|| with_suffix(&a.agent, ".eval.json"));
    ensure_parent(&out)?;
    #[derive(Serialize)]
    struct EvalSettings<'a> {
        env: &'a str,
        episodes: usize,
        seed: u64,
    }
    RunReport::new("eval", &EvalSettings { env: env_name, episodes, seed }, report)?
        .input(&a.agent)?
        .save(out)
}

/// Environment an agent was built for, from its state and action shapes.
fn env_of(agent: &Agent) -> Result<&'static str> {
    for name in ["gridworld", "pointmass"] {
        let env = Env::from_name(name)?;
        if env.state_dim() == agent.state_dim && env.action_spec() == agent.action_spec {
            return Ok(name);
        }
    }
    Err(Error::Incompatible("agent matches no built-in environment".into()))
}

fn bench_cmd(cli: &Cli, cfg: ExperimentConfig) -> Result<()> {
    let mut cfg = cfg;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    cfg.validate()?;
    let cells = grid_cells(&cfg);
    let rows = run_cells(
        &cfg,
        &cells,
        &BenchOptions {
            jobs: cli.jobs,
            out_dir: Some(out.clone()),
            verbose: true,
        },
    )?;
    let csv = out.join("bench.csv");
    write_bench_csv(&rows, &csv)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!("{} rows ({} failed) -> {}", rows.len(), failed, csv.display());
    #[derive(Serialize)]
    struct BenchSummary {
        rows: usize,
        failed: usize,
    }
    let mut run = RunReport::new("bench", &cfg, BenchSummary { rows: rows.len(), failed })?;
    if let Some(p) = &cli.config {
        run = run.input(p)?;
    }
    run.output(&csv).save(out.join("bench.report.json"))
}
