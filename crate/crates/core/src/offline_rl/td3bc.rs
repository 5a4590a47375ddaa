use rand_chacha::ChaCha8Rng;

use super::losses::{critic_regression, td3_targets, td3bc_actor_loss};
use super::{Agent, Batch, StepLosses};
use crate::approx::ActionBatch;
use crate::error::{Error, Result};

/// One TD3+BC step: twin-critic regression onto clipped double-Q targets;
/// every `policy_delay` steps an actor step on `-lambda Q + BC` followed by
/// target updates. The returned actor loss is NaN on critic-only steps.
pub(super) fn update(agent: &mut Agent, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<StepLosses> {
    let cfg = agent.config.clone();
    let target_policy = agent
        .target_policy
        .as_ref()
        .ok_or_else(|| Error::Incompatible("td3bc agent without target actor".into()))?;
    let y = td3_targets(
        &agent.target_critics,
        target_policy,
        batch,
        agent.gamma,
        cfg.policy_noise,
        cfg.noise_clip,
        cfg.action_bound,
        rng,
    )?;
    let optim = agent.optim.as_mut().expect("optimizer initialized");
    let mut critic_loss = 0.0;
    for (c, opt) in agent.critics.iter_mut().zip(optim.critics.iter_mut()) {
        let (l, grad) = critic_regression(c, batch.states.view(), &batch.actions, &[&y])?;
        critic_loss += l[0];
        opt.step(c.net.params_mut(), &grad)?;
    }
    critic_loss /= agent.critics.len() as f64;

    let mut actor_loss = f64::NAN;
    if (agent.train_steps + 1).is_multiple_of(cfg.policy_delay) {
        let ActionBatch::Continuous(actions) = &batch.actions else {
            return Err(Error::Incompatible("td3bc needs continuous actions".into()));
        };
        let (l, grad, _) = td3bc_actor_loss(
            &agent.policy,
            &agent.critics[0],
            batch.states.view(),
            actions.view(),
            cfg.alpha_td3bc,
            None,
        )?;
        actor_loss = l;
        agent.policy.apply(&mut optim.policy, &grad)?;
        agent.polyak_update(cfg.tau)?;
    }
    Ok(StepLosses {
        critic: critic_loss,
        actor: actor_loss,
    })
}
