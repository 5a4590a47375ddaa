use rand_chacha::ChaCha8Rng;

use super::losses::{awr_loss, awr_weights, critic_regression, value_loss};
use super::{Agent, Batch, StepLosses};
use crate::error::Result;

/// Minimum over the target critics of `Q(s, a)`.
fn target_q(agent: &Agent, batch: &Batch) -> Result<Vec<f32>> {
    let mut out: Option<Vec<f32>> = None;
    for c in &agent.target_critics {
        let q = c.q(batch.states.view(), &batch.actions)?;
        out = Some(match out {
            None => q,
            Some(m) => m.into_iter().zip(q).map(|(a, b)| a.min(b)).collect(),
        });
    }
    Ok(out.unwrap_or_default())
}

/// One IQL step: expectile value regression, Q regression onto
/// `r + gamma V(s')`, then advantage-weighted policy extraction.
pub(super) fn update(agent: &mut Agent, batch: &Batch, _rng: &mut ChaCha8Rng) -> Result<StepLosses> {
    let cfg = agent.config.clone();
    let q_t = target_q(agent, batch)?;
    let optim = agent.optim.as_mut().expect("optimizer initialized");
    let value_net = agent.value_net.as_mut().expect("iql agent has a value network");

    let (_, vgrad) = value_loss(value_net, batch.states.view(), &q_t, cfg.expectile)?;
    optim
        .value
        .as_mut()
        .expect("iql agent has a value optimizer")
        .step(value_net.params_mut(), &vgrad)?;

    let v_next = value_net.forward(batch.next_states.view())?;
    let g = agent.gamma as f32;
    let y: Vec<f32> = (0..batch.len())
        .map(|i| batch.rewards[i] + g * (1.0 - batch.dones[i]) * v_next[[i, 0]])
        .collect();
    let mut critic_loss = 0.0;
    for (c, opt) in agent.critics.iter_mut().zip(optim.critics.iter_mut()) {
        let (l, grad) = critic_regression(c, batch.states.view(), &batch.actions, &[&y])?;
        critic_loss += l[0];
        opt.step(c.net.params_mut(), &grad)?;
    }
    critic_loss /= agent.critics.len() as f64;

    let v = value_net.forward(batch.states.view())?;
    let adv: Vec<f32> = q_t.iter().zip(v.column(0)).map(|(q, v)| q - v).collect();
    let w = awr_weights(&adv, cfg.beta, cfg.exp_adv_max);
    let (actor_loss, pgrad) = awr_loss(&agent.policy, batch.states.view(), &batch.actions, &w)?;
    agent.policy.apply(&mut optim.policy, &pgrad)?;

    agent.polyak_update(cfg.tau)?;
    Ok(StepLosses {
        critic: critic_loss,
        actor: actor_loss,
    })
}
