//! Offline actor-critic training: TD3+BC and IQL, the shared TD machinery,
//! fine-tuning continuation and agent checkpoints.

mod checkpoint;
mod critic;
mod iql;
pub mod losses;
mod pool;
mod td3bc;

pub use checkpoint::{load_agent, save_agent};
pub use critic::{Critic, CriticKind, CriticTape};
pub use pool::{Batch, NormStats, TransitionPool, NORM_STD_FLOOR};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    ActionBatch, Activation, Adam, CategoricalPolicy, GaussianPolicy, Network, PolicyHead, PolicyOptimizer,
};
use crate::data::{Action, ActionSpec, OfflineDataset};
use crate::envs::{Actor, GAMMA};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Td3bc,
    Iql,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Td3bc => "td3bc",
            Algo::Iql => "iql",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algo> {
        match s {
            "td3bc" => Ok(Algo::Td3bc),
            "iql" => Ok(Algo::Iql),
            other => Err(Error::Usage(format!("unknown algorithm '{other}' (expected td3bc or iql)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Polyak rate for target networks.
    pub tau: f64,
    pub alpha_td3bc: f64,
    /// IQL expectile level.
    pub expectile: f64,
    /// IQL inverse temperature.
    pub beta: f64,
    pub exp_adv_max: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub td_action_samples: usize,
    /// Fixed std of the gaussian wrapped around the TD3+BC actor.
    pub wrapper_sigma: f64,
    pub action_bound: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            tau: 0.005,
            alpha_td3bc: 2.5,
            expectile: 0.7,
            beta: 3.0,
            exp_adv_max: 100.0,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            td_action_samples: 1,
            wrapper_sigma: 0.1,
            action_bound: 1.0,
            log_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return bad("expectile must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.wrapper_sigma > 0.0 && self.action_bound > 0.0) {
            return bad("wrapper_sigma and action_bound must be positive");
        }
        if self.policy_delay == 0 || self.td_action_samples == 0 {
            return bad("policy_delay and td_action_samples must be at least 1");
        }
        Ok(())
    }
}

/// Adam states kept with the agent so that fine-tuning continues smoothly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentOptim {
    pub policy: PolicyOptimizer,
    pub critics: Vec<Adam>,
    #[serde(default)]
    pub value: Option<Adam>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub algo: Algo,
    pub state_dim: usize,
    pub action_spec: ActionSpec,
    pub policy: PolicyHead,
    pub critics: Vec<Critic>,
    pub target_critics: Vec<Critic>,
    /// IQL state-value network.
    pub value_net: Option<Network>,
    /// TD3+BC target actor.
    pub target_policy: Option<PolicyHead>,
    pub norm: NormStats,
    pub gamma: f64,
    pub train_steps: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub optim: Option<AgentOptim>,
}

/// Mean losses over the last logging window.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgressRow {
    pub step: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct StepLosses {
    pub critic: f64,
    pub actor: f64,
}

impl Agent {
    /// Freshly initialized networks sized for `dataset`.
    pub fn init(algo: Algo, dataset: &OfflineDataset, cfg: &TrainConfig, seed: u64) -> Result<Agent> {
        cfg.validate()?;
        if algo == Algo::Td3bc && dataset.action_spec.is_discrete() {
            return Err(Error::Incompatible("td3bc needs a continuous action space".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = dataset.state_dim;
        let sizes = |out: usize| {
            let mut s = vec![sd];
            s.extend_from_slice(&cfg.hidden);
            s.push(out);
            s
        };
        let act = cfg.activation;
        let policy = match (algo, dataset.action_spec) {
            (_, ActionSpec::Discrete(n)) => PolicyHead::Categorical(CategoricalPolicy {
                logit_net: Network::new(&sizes(n), act, &mut rng)?,
            }),
            (Algo::Td3bc, ActionSpec::Continuous(d)) => PolicyHead::Gaussian(GaussianPolicy {
                mean_net: Network::new(&sizes(d), act, &mut rng)?,
                log_std: vec![cfg.wrapper_sigma.ln() as f32; d],
                learn_log_std: false,
                action_bound: cfg.action_bound as f32,
            }),
            (Algo::Iql, ActionSpec::Continuous(d)) => PolicyHead::Gaussian(GaussianPolicy {
                mean_net: Network::new(&sizes(d), act, &mut rng)?,
                log_std: vec![0.0; d],
                learn_log_std: true,
                action_bound: cfg.action_bound as f32,
            }),
        };
        let kind = match dataset.action_spec {
            ActionSpec::Discrete(n) => CriticKind::Discrete(n),
            ActionSpec::Continuous(d) => CriticKind::Continuous(d),
        };
        let critics = (0..2)
            .map(|_| Critic::new(sd, kind, &cfg.hidden, act, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let value_net = match algo {
            Algo::Iql => Some(Network::new(&sizes(1), act, &mut rng)?),
            Algo::Td3bc => None,
        };
        let norm = match algo {
            Algo::Td3bc => NormStats::from_dataset(dataset)?,
            Algo::Iql => NormStats::identity(sd),
        };
        let mut agent = Agent {
            algo,
            state_dim: sd,
            action_spec: dataset.action_spec,
            target_policy: (algo == Algo::Td3bc).then(|| policy.clone()),
            policy,
            target_critics: critics.clone(),
            critics,
            value_net,
            norm,
            gamma: GAMMA,
            train_steps: 0,
            seed,
            config: cfg.clone(),
            optim: None,
        };
        agent.reset_optim();
        Ok(agent)
    }

    /// Fresh Adam states at the configured learning rates.
    pub fn reset_optim(&mut self) {
        self.optim = Some(AgentOptim {
            policy: PolicyOptimizer::new(&self.policy, self.config.lr_actor),
            critics: self
                .critics
                .iter()
                .map(|c| Adam::new(c.net.num_params(), self.config.lr_critic))
                .collect(),
            value: self
                .value_net
                .as_ref()
                .map(|v| Adam::new(v.num_params(), self.config.lr_critic)),
        });
    }

    pub fn critic_kind(&self) -> CriticKind {
        self.critics[0].kind
    }

    /// Normalized network input for raw environment states.
    pub fn normalize(&self, states: &[impl AsRef<[f64]>]) -> Array2<f32> {
        self.norm.apply(states)
    }

    pub fn pool(&self, dataset: &OfflineDataset, ids: Option<&[usize]>) -> Result<TransitionPool> {
        self.check_compatible(dataset)?;
        TransitionPool::new(dataset, ids, &self.norm)
    }

    pub fn check_compatible(&self, dataset: &OfflineDataset) -> Result<()> {
        if dataset.state_dim != self.state_dim || dataset.action_spec != self.action_spec {
            return Err(Error::Incompatible(format!(
                "agent expects state_dim {} / {:?}, dataset has {} / {:?}",
                self.state_dim, self.action_spec, dataset.state_dim, dataset.action_spec
            )));
        }
        Ok(())
    }

    /// Mean (gaussian) or argmax (categorical) actions at raw states.
    pub fn greedy(&self, states: &[impl AsRef<[f64]>]) -> Result<Vec<Action>> {
        let x = self.normalize(states);
        Ok(to_actions(&self.policy.greedy(x.view())?))
    }

    /// `Q_1(s, pi_greedy(s))` for raw states.
    pub fn greedy_values(&self, states: &[impl AsRef<[f64]>]) -> Result<Vec<f64>> {
        let x = self.normalize(states);
        let a = self.policy.greedy(x.view())?;
        let q = self.critics[0].q(x.view(), &a)?;
        match q.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("critic output at state {i}"))),
            None => Ok(q.into_iter().map(f64::from).collect()),
        }
    }

    /// Soft update of every target network towards its online counterpart.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            polyak_update(&mut t.net, &c.net, tau)?;
        }
        if let Some(tp) = &mut self.target_policy {
            polyak_update(tp.net_mut(), self.policy.net(), tau)?;
        }
        Ok(())
    }

    pub(crate) fn update(&mut self, pool: &TransitionPool, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
        if self.optim.is_none() {
            self.reset_optim();
        }
        let batch = pool.sample(self.config.batch_size, rng)?;
        let losses = match self.algo {
            Algo::Iql => iql::update(self, &batch, rng)?,
            Algo::Td3bc => td3bc::update(self, &batch, rng)?,
        };
        self.train_steps += 1;
        Ok(losses)
    }

    fn run(
        &mut self,
        pool: &TransitionPool,
        steps: usize,
        rng: &mut ChaCha8Rng,
        progress: &mut dyn FnMut(&Agent, &ProgressRow),
    ) -> Result<()> {
        let every = self.config.log_every.max(1);
        let (mut critic, mut actor, mut count) = (0.0, 0.0, 0usize);
        let mut actor_count = 0usize;
        for step in 1..=steps {
            let l = self.update(pool, rng)?;
            if l.actor.is_finite() {
                actor += l.actor;
                actor_count += 1;
            }
            critic += l.critic;
            count += 1;
            if step % every == 0 || step == steps {
                let row = ProgressRow {
                    step,
                    critic_loss: critic / count as f64,
                    actor_loss: if actor_count > 0 { actor / actor_count as f64 } else { f64::NAN },
                };
                progress(self, &row);
                (critic, actor, count, actor_count) = (0.0, 0.0, 0, 0);
            }
        }
        Ok(())
    }
}

impl Actor for Agent {
    fn act(&self, observations: &[Vec<f64>], _rng: &mut dyn rand::RngCore) -> Result<Vec<Action>> {
        self.greedy(observations)
    }
}

pub(crate) fn to_actions(batch: &ActionBatch) -> Vec<Action> {
    match batch {
        ActionBatch::Discrete(a) => a.iter().map(|&i| Action::Discrete(i)).collect(),
        ActionBatch::Continuous(a) => a
            .rows()
            .into_iter()
            .map(|r| Action::Continuous(r.iter().map(|&v| v as f64).collect()))
            .collect(),
    }
}

/// `target <- (1 - tau) target + tau online`.
pub fn polyak_update(target: &mut Network, online: &Network, tau: f64) -> Result<()> {
    target.polyak_from(online, tau as f32)
}

/// Trains a fresh agent; `progress` is called every `cfg.log_every` steps.
pub fn train_with_progress(
    algo: Algo,
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    seed: u64,
    progress: &mut dyn FnMut(&Agent, &ProgressRow),
) -> Result<Agent> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut agent = Agent::init(algo, dataset, cfg, seed)?;
    let pool = agent.pool(dataset, None)?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("dataset has no transitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11);
    agent.run(&pool, cfg.steps, &mut rng, progress)?;
    Ok(agent)
}

pub fn train(algo: Algo, dataset: &OfflineDataset, cfg: &TrainConfig, seed: u64) -> Result<Agent> {
    train_with_progress(algo, dataset, cfg, seed, &mut |_, _| {})
}

pub fn train_td3bc(dataset: &OfflineDataset, cfg: &TrainConfig, seed: u64) -> Result<Agent> {
    train(Algo::Td3bc, dataset, cfg, seed)
}

pub fn train_iql(dataset: &OfflineDataset, cfg: &TrainConfig, seed: u64) -> Result<Agent> {
    train(Algo::Iql, dataset, cfg, seed)
}

/// Continues the agent's own update loop on `dataset` for `steps` steps.
/// Normalization statistics and optimizer states carry over.
pub fn finetune(agent: &Agent, dataset: &OfflineDataset, steps: usize, seed: u64) -> Result<Agent> {
    finetune_with_progress(agent, dataset, steps, seed, &mut |_, _| {})
}

/// [`finetune`] reporting every `agent.config.log_every` steps.
pub fn finetune_with_progress(
    agent: &Agent,
    dataset: &OfflineDataset,
    steps: usize,
    seed: u64,
    progress: &mut dyn FnMut(&Agent, &ProgressRow),
) -> Result<Agent> {
    let mut out = agent.clone();
    if steps == 0 {
        return Ok(out);
    }
    let pool = agent.pool(dataset, None)?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("cannot fine-tune on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1e7_0e5e);
    out.run(&pool, steps, &mut rng, progress)?;
    Ok(out)
}

/// Policy evaluation: fits `critic` to the TD fixed point of `policy` on
/// the pooled transitions with Adam and Polyak-averaged targets. Returns the
/// mean TD loss over the final `steps / 10` steps.
#[allow(clippy::too_many_arguments)]
pub fn fit_critic(
    critic: &mut Critic,
    policy: &PolicyHead,
    pool: &TransitionPool,
    steps: usize,
    batch_size: usize,
    lr: f64,
    tau: f64,
    gamma: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = critic.clone();
    let mut opt = Adam::new(critic.net.num_params(), lr);
    let tail = (steps / 10).max(1);
    let mut tail_loss = 0.0;
    for step in 0..steps {
        let batch = pool.sample(batch_size, &mut rng)?;
        let (l, g) = losses::td_loss(critic, &target, policy, &batch, gamma, 1, &mut rng)?;
        opt.step(critic.net.params_mut(), &g)?;
        polyak_update(&mut target.net, &critic.net, tau)?;
        if step + tail >= steps {
            tail_loss += l;
        }
    }
    Ok(tail_loss / tail.min(steps.max(1)) as f64)
}

#[cfg(test)]
mod tests;
