use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentOptim, Algo, Critic, CriticKind, NormStats, TrainConfig};
use crate::approx::{CategoricalPolicy, GaussianPolicy, Network, PolicyHead};
use crate::data::io::write_atomic;
use crate::data::ActionSpec;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    steps: usize,
}

/// On-disk agent. The leading keys are the portable core; the rest are
/// needed to continue training.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    algo: Algo,
    state_dim: usize,
    action_spec: ActionSpec,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    policy: Network,
    critics: Vec<Network>,
    log_std: Vec<f32>,
    meta: Meta,
    gamma: f64,
    learn_log_std: bool,
    action_bound: f32,
    target_critics: Vec<Network>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value_net: Option<Network>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_policy: Option<Network>,
    config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optim: Option<AgentOptim>,
}

fn to_file(agent: &Agent) -> CheckpointFile {
    let (learn_log_std, action_bound) = match &agent.policy {
        PolicyHead::Gaussian(g) => (g.learn_log_std, g.action_bound),
        PolicyHead::Categorical(_) => (false, 1.0),
    };
    CheckpointFile {
        algo: agent.algo,
        state_dim: agent.state_dim,
        action_spec: agent.action_spec,
        norm_mean: agent.norm.mean.clone(),
        norm_std: agent.norm.std.clone(),
        policy: agent.policy.net().clone(),
        critics: agent.critics.iter().map(|c| c.net.clone()).collect(),
        log_std: agent.policy.log_std().to_vec(),
        meta: Meta {
            seed: agent.seed,
            steps: agent.train_steps,
        },
        gamma: agent.gamma,
        learn_log_std,
        action_bound,
        target_critics: agent.target_critics.iter().map(|c| c.net.clone()).collect(),
        value_net: agent.value_net.clone(),
        target_policy: agent.target_policy.as_ref().map(|p| p.net().clone()),
        config: agent.config.clone(),
        optim: agent.optim.clone(),
    }
}

fn from_file(f: CheckpointFile) -> Result<Agent> {
    let bad = |m: String| Err(Error::format("checkpoint", m));
    let sd = f.state_dim;
    if f.norm_mean.len() != sd || f.norm_std.len() != sd {
        return bad(format!("normalization width differs from state_dim {sd}"));
    }
    if f.norm_std.iter().any(|&s| !(s > 0.0)) {
        return bad("norm_std must be positive".into());
    }
    if f.critics.is_empty() || f.critics.len() != f.target_critics.len() {
        return bad("critics and target critics must be non-empty and paired".into());
    }
    let (kind, out) = match f.action_spec {
        ActionSpec::Discrete(n) => (CriticKind::Discrete(n), n),
        ActionSpec::Continuous(d) => (CriticKind::Continuous(d), d),
    };
    if f.policy.input_dim() != sd || f.policy.output_dim() != out {
        return bad("policy network does not match state_dim/action_spec".into());
    }
    let critic_in = match kind {
        CriticKind::Discrete(_) => sd,
        CriticKind::Continuous(d) => sd + d,
    };
    let critic_out = match kind {
        CriticKind::Discrete(n) => n,
        CriticKind::Continuous(_) => 1,
    };
    for (c, t) in f.critics.iter().zip(&f.target_critics) {
        if c.input_dim() != critic_in || c.output_dim() != critic_out || c.sizes() != t.sizes() {
            return bad("critic shapes are inconsistent".into());
        }
    }
    let make_policy = |net: Network| -> Result<PolicyHead> {
        match f.action_spec {
            ActionSpec::Discrete(_) => Ok(PolicyHead::Categorical(CategoricalPolicy { logit_net: net })),
            ActionSpec::Continuous(d) if f.log_std.len() == d => Ok(PolicyHead::Gaussian(GaussianPolicy {
                mean_net: net,
                log_std: f.log_std.clone(),
                learn_log_std: f.learn_log_std,
                action_bound: f.action_bound,
            })),
            ActionSpec::Continuous(_) => Err(Error::format("checkpoint", "log_std width differs from action dim")),
        }
    };
    let policy = make_policy(f.policy)?;
    let target_policy = match f.target_policy {
        Some(n) if n.sizes() == policy.net().sizes() => Some(make_policy(n)?),
        Some(_) => return bad("target policy shape differs from policy".into()),
        None => None,
    };
    match (f.algo, &f.value_net, &target_policy) {
        (Algo::Iql, Some(v), _) if v.input_dim() == sd && v.output_dim() == 1 => {}
        (Algo::Td3bc, None, Some(_)) => {}
        _ => return bad(format!("missing or malformed {} networks", f.algo)),
    }
    let wrap = |nets: Vec<Network>| nets.into_iter().map(|net| Critic { kind, net }).collect::<Vec<_>>();
    Ok(Agent {
        algo: f.algo,
        state_dim: sd,
        action_spec: f.action_spec,
        policy,
        critics: wrap(f.critics),
        target_critics: wrap(f.target_critics),
        value_net: f.value_net,
        target_policy,
        norm: NormStats {
            mean: f.norm_mean,
            std: f.norm_std,
        },
        gamma: f.gamma,
        train_steps: f.meta.steps,
        seed: f.meta.seed,
        config: f.config,
        optim: f.optim,
    })
}

pub fn save_agent(agent: &Agent, path: impl AsRef<Path>) -> Result<()> {
    let file = to_file(agent);
    write_atomic(path.as_ref(), |w| {
        serde_json::to_writer(&mut *w, &file)?;
        w.write_all(b"\n")
    })
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<Agent> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    from_file(file)
}
