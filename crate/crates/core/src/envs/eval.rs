use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, GAMMA};
use crate::data::{Action, Trajectory};
use crate::error::{Error, Result};

/// Anything that maps a batch of observations to actions.
pub trait Actor {
    fn act(&self, observations: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<Vec<Action>>;
}

impl<F> Actor for F
where
    F: Fn(&[Vec<f64>], &mut dyn rand::RngCore) -> Result<Vec<Action>>,
{
    fn act(&self, observations: &[Vec<f64>], rng: &mut dyn rand::RngCore) -> Result<Vec<Action>> {
        self(observations, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted: f64,
    pub episodes: usize,
    pub seed: u64,
}

/// `sum_i gamma^i r_i`, starting at i = 0.
pub fn discounted_return(trajectory: &Trajectory, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in &trajectory.rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Runs `episodes` episodes in lock-step, querying the actor once per step
/// for all still-running episodes. The standard deviation is the sample
/// one, defined as 0 for a single episode.
pub fn evaluate_policy(actor: &dyn Actor, env: &Env, episodes: usize, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<_> = (0..episodes).map(|_| env.reset(&mut rng)).collect();
    let mut running: Vec<usize> = (0..episodes).collect();
    let mut returns = vec![0.0; episodes];
    let mut discounted = vec![0.0; episodes];
    let mut discount = 1.0;
    while !running.is_empty() {
        let obs: Vec<Vec<f64>> = running.iter().map(|&i| env.observe(&states[i])).collect();
        let actions = actor.act(&obs, &mut rng)?;
        if actions.len() != running.len() {
            return Err(Error::Shape(format!("actor returned {} actions for {} states", actions.len(), running.len())));
        }
        let mut still = Vec::with_capacity(running.len());
        for (&i, action) in running.iter().zip(&actions) {
            let step = env.step(&states[i], action)?;
            returns[i] += step.reward;
            discounted[i] += discount * step.reward;
            states[i] = step.next;
            if !(step.done || step.truncated) {
                still.push(i);
            }
        }
        running = still;
        discount *= GAMMA;
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = if episodes > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport {
        mean_return: mean,
        std_return: std,
        mean_discounted: discounted.iter().sum::<f64>() / n,
        episodes,
        seed,
    })
}

/// Uniformly random actor, mostly useful as a baseline.
pub fn random_actor(env: &Env) -> impl Actor + '_ {
    move |obs: &[Vec<f64>], rng: &mut dyn rand::RngCore| -> Result<Vec<Action>> {
        Ok(obs
            .iter()
            .map(|_| match env.action_spec() {
                crate::data::ActionSpec::Discrete(n) => Action::Discrete(rng.random_range(0..n)),
                crate::data::ActionSpec::Continuous(d) => {
                    Action::Continuous((0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
                }
            })
            .collect())
    }
}
