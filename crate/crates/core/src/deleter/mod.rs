//! Trajectory unlearning: a forgetting phase that ascends the policy value
//! on the remaining data while descending it on the forget set, followed by
//! convergence training that pulls the critic back towards the original's
//! values on the remaining data. Baselines share the same entry point.

mod report;

pub use report::{Phase, TraceRow, UnlearnReport};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{ActionBatch, Adam, PolicyGrad, PolicyHead, PolicyOptimizer, Real};
use crate::data::{random_reward_transform, Action, DatasetSplit, OfflineDataset};
use crate::error::{Error, Result};
use crate::offline_rl::losses::{critic_regression, td_targets};
use crate::offline_rl::{finetune_with_progress, train_with_progress, Agent, AgentOptim, Critic, ProgressRow, TransitionPool};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trajdeleter,
    ForgettingOnly,
    Finetune,
    RandomReward,
    Retrain,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Trajdeleter,
        Method::ForgettingOnly,
        Method::Finetune,
        Method::RandomReward,
        Method::Retrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trajdeleter => "trajdeleter",
            Method::ForgettingOnly => "forgetting_only",
            Method::Finetune => "finetune",
            Method::RandomReward => "random_reward",
            Method::Retrain => "retrain",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown unlearning method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    /// Forgetting steps.
    pub k: usize,
    /// Convergence steps.
    pub h: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Policy samples per state for continuous advantages.
    pub advantage_samples: usize,
    pub td_action_samples: usize,
    pub method: Method,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            k: 800,
            h: 200,
            lambda: 1.0,
            batch_size: 256,
            lr_actor: 3e-5,
            lr_critic: 3e-4,
            advantage_samples: 10,
            td_action_samples: 1,
            method: Method::Trajdeleter,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if matches!(self.method, Method::Trajdeleter | Method::ForgettingOnly) && self.k + self.h == 0 {
            return bad("K + H must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.advantage_samples == 0 || self.td_action_samples == 0 || self.batch_size == 0 {
            return bad("advantage_samples, td_action_samples and batch_size must be at least 1");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.method == Method::ForgettingOnly && self.k == 0 {
            return bad("forgetting_only needs K > 0");
        }
        Ok(())
    }

    /// Convergence steps actually run (none in the forgetting-only ablation).
    pub fn convergence_steps(&self) -> usize {
        match self.method {
            Method::ForgettingOnly => 0,
            _ => self.h,
        }
    }
}

/// `A(s, a) = Q(s, a) - E_{a' ~ pi}[Q(s, a')]` with the agent's first critic,
/// for one raw state.
pub fn advantage<R: Rng + ?Sized>(
    agent: &Agent,
    state: &[f64],
    action: &Action,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let x = agent.normalize(&[state]);
    let a = match action {
        Action::Discrete(i) => ActionBatch::Discrete(vec![*i]),
        Action::Continuous(v) => ActionBatch::Continuous(ndarray::Array2::from_shape_fn((1, v.len()), |(_, j)| v[j] as f32)),
    };
    Ok(advantages(&agent.critics[0], &agent.policy, x.view(), &a, samples, rng)?[0] as f64)
}

/// Batched advantages on normalized states. Discrete policies use the exact
/// expectation over actions, gaussian ones the mean over `samples` draws.
pub fn advantages<R: Rng + ?Sized>(
    critic: &Critic,
    policy: &PolicyHead,
    states: ArrayView2<'_, f32>,
    actions: &ActionBatch,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    match actions {
        ActionBatch::Discrete(a) => {
            let q = critic.q_all(states)?;
            let p = policy.probs(states)?;
            Ok(a.iter()
                .enumerate()
                .map(|(i, &ai)| {
                    let baseline: f32 = q.row(i).iter().zip(p.row(i)).map(|(q, p)| q * p).sum();
                    q[[i, ai]] - baseline
                })
                .collect())
        }
        ActionBatch::Continuous(_) => {
            let q = critic.q(states, actions)?;
            let mut baseline = vec![0.0f32; q.len()];
            let samples = samples.max(1);
            for _ in 0..samples {
                let a = policy.sample(states, rng)?;
                for (b, v) in baseline.iter_mut().zip(critic.q(states, &a)?) {
                    *b += v;
                }
            }
            let k = samples as f32;
            Ok(q.iter().zip(&baseline).map(|(q, b)| q - b / k).collect())
        }
    }
}

/// Policy-gradient surrogate `-scale * mean_i A_i log pi(a_i | s_i)` with the
/// advantages held constant, and its gradient.
pub fn pg_loss<F: Real>(
    policy: &PolicyHead<F>,
    states: ArrayView2<'_, F>,
    actions: &ActionBatch<F>,
    advantages: &[F],
    scale: f64,
) -> Result<(f64, PolicyGrad<F>)> {
    let n = advantages.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty policy-gradient batch".into()));
    }
    let k = F::c(-scale / n as f64);
    let w: Vec<F> = advantages.iter().map(|&a| k * a).collect();
    let (logps, grad) = policy.log_prob_grad(states, actions, &w)?;
    let loss = logps.iter().zip(&w).map(|(l, w)| l.f64() * w.f64()).sum();
    Ok((loss, grad))
}

/// Samples `a ~ pi'(s)` at the given states, scores them with the current
/// critic and returns the surrogate loss and gradient scaled by `scale`.
fn sampled_policy_gradient<R: Rng + ?Sized>(
    agent: &Agent,
    states: ArrayView2<'_, f32>,
    scale: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, PolicyGrad)> {
    let actions = agent.policy.sample(states, rng)?;
    let adv = advantages(&agent.critics[0], &agent.policy, states, &actions, samples, rng)?;
    pg_loss(&agent.policy, states, &actions, &adv, scale)
}

/// The agent being unlearned together with its optimizers.
#[derive(Clone, Debug)]
pub struct UnlearnState {
    pub agent: Agent,
    pub policy_opt: PolicyOptimizer,
    pub critic_opts: Vec<Adam>,
}

impl UnlearnState {
    /// Starts from a copy of `agent` with fresh optimizers at `cfg`'s rates.
    pub fn new(agent: &Agent, cfg: &UnlearnConfig) -> Self {
        UnlearnState {
            policy_opt: PolicyOptimizer::new(&agent.policy, cfg.lr_actor),
            critic_opts: agent
                .critics
                .iter()
                .map(|c| Adam::new(c.net.num_params(), cfg.lr_critic))
                .collect(),
            agent: agent.clone(),
        }
    }

    /// The unlearned agent; later fine-tuning continues from these optimizers.
    pub fn into_agent(self) -> Agent {
        let mut agent = self.agent;
        let value = agent.optim.as_ref().and_then(|o| o.value.clone());
        agent.optim = Some(AgentOptim {
            policy: self.policy_opt,
            critics: self.critic_opts,
            value,
        });
        agent
    }

    fn critic_td_step<R: Rng + ?Sized>(
        &mut self,
        batch: &crate::offline_rl::Batch,
        anchors: Option<&[Vec<f32>]>,
        cfg: &UnlearnConfig,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let (mut td_total, mut gap_total) = (0.0, 0.0);
        let n_critics = self.agent.critics.len();
        for i in 0..n_critics {
            let y = td_targets(
                &self.agent.target_critics[i],
                &self.agent.policy,
                batch,
                self.agent.gamma,
                cfg.td_action_samples,
                rng,
            )?;
            let mut targets: Vec<&[f32]> = vec![&y];
            if let Some(a) = anchors {
                targets.insert(0, &a[i]);
            }
            let critic = &mut self.agent.critics[i];
            let (losses, grad) = critic_regression(critic, batch.states.view(), &batch.actions, &targets)?;
            self.critic_opts[i].step(critic.net.params_mut(), &grad)?;
            td_total += *losses.last().unwrap();
            if anchors.is_some() {
                gap_total += losses[0];
            }
        }
        let tau = self.agent.config.tau;
        self.agent.polyak_update(tau)?;
        Ok((td_total / n_critics as f64, gap_total / n_critics as f64))
    }
}

/// Losses of a single unlearning step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub actor_loss: f64,
    pub critic_loss: f64,
}

/// Mean `|Q'(s, a) - Q(s, a)|` of the first critics over every transition
/// of `pool`.
pub fn critic_gap(unlearned: &Agent, original: &Agent, pool: &TransitionPool) -> Result<f64> {
    let all = pool.all();
    let a = unlearned.critics[0].q(all.states.view(), &all.actions)?;
    let b = original.critics[0].q(all.states.view(), &all.actions)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len().max(1) as f64)
}

/// One forgetting step: an ascent step on
/// `mean_{D_m}[A log pi'] - lambda * mean_{D_f}[A log pi']` (actions drawn
/// from `pi'`), then one TD step of the critics on a batch from `D`.
pub fn forgetting_step<R: Rng + ?Sized>(
    state: &mut UnlearnState,
    d_m: &TransitionPool,
    d_f: &TransitionPool,
    d_all: &TransitionPool,
    cfg: &UnlearnConfig,
    rng: &mut R,
) -> Result<StepRecord> {
    if d_m.is_empty() || d_f.is_empty() {
        return Err(Error::InvalidArgument("forgetting needs non-empty D_m and D_f".into()));
    }
    let bm = d_m.sample(cfg.batch_size, rng)?;
    let (lm, mut grad) = sampled_policy_gradient(&state.agent, bm.states.view(), 1.0, cfg.advantage_samples, rng)?;
    let bf = d_f.sample(cfg.batch_size, rng)?;
    let (lf, gf) = sampled_policy_gradient(&state.agent, bf.states.view(), 1.0, cfg.advantage_samples, rng)?;
    let lambda = cfg.lambda as f32;
    grad.add_scaled(&gf, -lambda);
    state.agent.policy.apply(&mut state.policy_opt, &grad)?;

    let batch = d_all.sample(cfg.batch_size, rng)?;
    let (td, _) = state.critic_td_step(&batch, None, cfg, rng)?;
    Ok(StepRecord {
        actor_loss: lm - cfg.lambda * lf,
        critic_loss: td,
    })
}

/// One convergence step on a `D_m` batch: the critics minimize
/// `(Q' - Q_orig)^2 + TD` and the actor takes a `D_m` policy-gradient step.
/// The returned critic loss is the sum of both terms.
pub fn convergence_step<R: Rng + ?Sized>(
    state: &mut UnlearnState,
    original: &Agent,
    d_m: &TransitionPool,
    cfg: &UnlearnConfig,
    rng: &mut R,
) -> Result<StepRecord> {
    if d_m.is_empty() {
        return Err(Error::InvalidArgument("convergence training needs a non-empty D_m".into()));
    }
    if original.critics.len() != state.agent.critics.len() {
        return Err(Error::Incompatible("original and unlearned agents differ in critic count".into()));
    }
    let batch = d_m.sample(cfg.batch_size, rng)?;
    let anchors = original
        .critics
        .iter()
        .map(|c| c.q(batch.states.view(), &batch.actions))
        .collect::<Result<Vec<_>>>()?;
    let (td, gap) = state.critic_td_step(&batch, Some(&anchors), cfg, rng)?;
    let (actor_loss, grad) = sampled_policy_gradient(&state.agent, batch.states.view(), 1.0, cfg.advantage_samples, rng)?;
    state.agent.policy.apply(&mut state.policy_opt, &grad)?;
    Ok(StepRecord {
        actor_loss,
        critic_loss: gap + td,
    })
}

struct Pools {
    remain: TransitionPool,
    forget: TransitionPool,
    all: TransitionPool,
}

fn pools(agent: &Agent, dataset: &OfflineDataset, split: &DatasetSplit) -> Result<Pools> {
    if split.n_trajectories() != dataset.len() {
        return Err(Error::Incompatible(format!(
            "split covers {} trajectories, dataset has {}",
            split.n_trajectories(),
            dataset.len()
        )));
    }
    Ok(Pools {
        remain: agent.pool(dataset, Some(&split.remain_ids))?,
        forget: agent.pool(dataset, Some(&split.forget_ids))?,
        all: agent.pool(dataset, None)?,
    })
}

/// Runs `K` forgetting steps then `H` convergence steps (none for
/// `forgetting_only`). Wall time covers the update loop only.
pub fn unlearn(
    agent: &Agent,
    dataset: &OfflineDataset,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<(Agent, UnlearnReport)> {
    cfg.validate()?;
    if !matches!(cfg.method, Method::Trajdeleter | Method::ForgettingOnly) {
        return Err(Error::InvalidArgument(format!("unlearn does not run the {} baseline", cfg.method)));
    }
    let p = pools(agent, dataset, split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = UnlearnState::new(agent, cfg);
    let h = cfg.convergence_steps();
    let mut report = UnlearnReport::new(cfg.method, cfg.k + h);

    let start = Instant::now();
    for step in 0..cfg.k {
        let r = forgetting_step(&mut state, &p.remain, &p.forget, &p.all, cfg, &mut rng)?;
        report.trace.push(TraceRow::new(step, Phase::Forgetting, r, None));
    }
    let forgetting_time = start.elapsed().as_secs_f64();
    let mut excluded = 0.0;
    if h > 0 {
        let t = Instant::now();
        report.critic_gap_start = Some(critic_gap(&state.agent, agent, &p.remain)?);
        excluded += t.elapsed().as_secs_f64();
    }
    for step in 0..h {
        let r = convergence_step(&mut state, agent, &p.remain, cfg, &mut rng)?;
        report.trace.push(TraceRow::new(cfg.k + step, Phase::Convergence, r, None));
    }
    report.wall_time_seconds = start.elapsed().as_secs_f64() - excluded;
    if h > 0 {
        report.critic_gap_end = Some(critic_gap(&state.agent, agent, &p.remain)?);
    }
    report.forgetting_seconds = forgetting_time;
    Ok((state.into_agent(), report))
}

// Retraining is a fresh run: its initialization and minibatches must not
// replay the original agent's.
const RETRAIN_SALT: u64 = 0xa076_1d64_78bd_642f;

/// Retraining, fine-tuning and random-reward baselines.
pub fn run_baseline(
    method: Method,
    agent: &Agent,
    dataset: &OfflineDataset,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<(Agent, UnlearnReport)> {
    cfg.validate()?;
    if split.n_trajectories() != dataset.len() {
        return Err(Error::Incompatible("split does not match dataset".into()));
    }
    let remain = dataset.select(&split.remain_ids)?;
    let steps = cfg.k + cfg.h;
    let phase = if method == Method::Retrain { Phase::Retrain } else { Phase::Finetune };
    let mut trace = Vec::new();
    let mut record = |_: &Agent, row: &ProgressRow| {
        let r = StepRecord {
            actor_loss: row.actor_loss,
            critic_loss: row.critic_loss,
        };
        trace.push(TraceRow::new(row.step - 1, phase, r, None));
    };
    let start = Instant::now();
    let mut out = match method {
        Method::Retrain => {
            let mut per_step = agent.config.clone();
            per_step.log_every = 1;
            train_with_progress(agent.algo, &remain, &per_step, seed ^ RETRAIN_SALT, &mut record)?
        }
        Method::Finetune | Method::RandomReward => {
            let data = match method {
                Method::Finetune => remain,
                _ => random_reward_transform(dataset, split, seed)?,
            };
            let mut logged = agent.clone();
            logged.config.log_every = 1;
            finetune_with_progress(&logged, &data, steps, seed, &mut record)?
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a baseline"))),
    };
    let wall = start.elapsed().as_secs_f64();
    out.config.log_every = agent.config.log_every;
    let mut report = UnlearnReport::new(method, trace.len());
    report.trace = trace;
    report.wall_time_seconds = wall;
    Ok((out, report))
}

/// Dispatches on `cfg.method`.
pub fn run_method(
    agent: &Agent,
    dataset: &OfflineDataset,
    split: &DatasetSplit,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<(Agent, UnlearnReport)> {
    match cfg.method {
        Method::Trajdeleter | Method::ForgettingOnly => unlearn(agent, dataset, split, cfg, seed),
        m => run_baseline(m, agent, dataset, split, cfg, seed),
    }
}

#[cfg(test)]
mod tests;
