use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::gridworld::{argmax, value_iteration_oracle, QTable, GRID_ACTIONS};
use super::{Env, EnvState, GAMMA};
use crate::data::{Action, OfflineDataset, Trajectory};
use crate::error::{Error, Result};

const PD_GAINS: (f64, f64) = (2.0, 1.0);

/// Named data-collection policies.
///
/// Gridworld: `optimal` is greedy on the value-iteration oracle, `expert`
/// and `medium` are epsilon-greedy with epsilon 0.1 and 0.4. Pointmass:
/// a PD controller with gaussian action noise of 0, 0.1 and 0.5.
/// `random` is uniform in both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BehaviorPolicy {
    Optimal,
    Expert,
    Medium,
    Random,
}

impl BehaviorPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorPolicy::Optimal => "optimal",
            BehaviorPolicy::Expert => "expert",
            BehaviorPolicy::Medium => "medium",
            BehaviorPolicy::Random => "random",
        }
    }

    fn noise(&self) -> f64 {
        match self {
            BehaviorPolicy::Optimal => 0.0,
            BehaviorPolicy::Expert => 0.1,
            BehaviorPolicy::Medium => 0.4,
            BehaviorPolicy::Random => 1.0,
        }
    }

    fn pointmass_sigma(&self) -> f64 {
        match self {
            BehaviorPolicy::Optimal => 0.0,
            BehaviorPolicy::Expert => 0.1,
            BehaviorPolicy::Medium => 0.5,
            BehaviorPolicy::Random => 0.0,
        }
    }
}

impl FromStr for BehaviorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(BehaviorPolicy::Optimal),
            "expert" => Ok(BehaviorPolicy::Expert),
            "medium" => Ok(BehaviorPolicy::Medium),
            "random" => Ok(BehaviorPolicy::Random),
            other => Err(Error::Usage(format!("unknown behavior policy '{other}'"))),
        }
    }
}

impl fmt::Display for BehaviorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mixture of behavior policies; one policy is drawn per episode.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorSpec {
    pub mixture: Vec<(BehaviorPolicy, f64)>,
    pub episodes: usize,
    pub seed: u64,
}

impl BehaviorSpec {
    pub fn new(mixture: Vec<(BehaviorPolicy, f64)>, episodes: usize, seed: u64) -> Result<Self> {
        let spec = BehaviorSpec {
            mixture,
            episodes,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses `expert:0.5,medium:0.5`.
    pub fn parse_mixture(text: &str) -> Result<Vec<(BehaviorPolicy, f64)>> {
        text.split(',')
            .map(|part| {
                let (name, weight) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Usage(format!("mixture entry '{part}' is not name:weight")))?;
                let weight: f64 = weight
                    .trim()
                    .parse()
                    .map_err(|_| Error::Usage(format!("bad weight in '{part}'")))?;
                Ok((name.trim().parse()?, weight))
            })
            .collect()
    }

    pub fn mixture_string(&self) -> String {
        self.mixture
            .iter()
            .map(|(p, w)| format!("{p}:{w}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mixture.is_empty() {
            return Err(Error::InvalidArgument("behavior mixture is empty".into()));
        }
        if self.mixture.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = self.mixture.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BehaviorPolicy {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, w) in &self.mixture {
            acc += w;
            if u < acc {
                return *p;
            }
        }
        self.mixture.iter().rev().find(|(_, w)| *w > 0.0).unwrap().0
    }
}

struct Behavior {
    oracle: Option<QTable>,
}

impl Behavior {
    fn new(env: &Env) -> Self {
        let oracle = match env {
            Env::GridWorld(g) => Some(value_iteration_oracle(g, GAMMA)),
            Env::PointMass(_) => None,
        };
        Behavior { oracle }
    }

    fn act<R: Rng + ?Sized>(&self, env: &Env, state: &EnvState, policy: BehaviorPolicy, rng: &mut R) -> Action {
        match (env, state) {
            (Env::GridWorld(g), EnvState::Grid { x, y, .. }) => {
                if policy == BehaviorPolicy::Random || rng.random::<f64>() < policy.noise() {
                    Action::Discrete(rng.random_range(0..GRID_ACTIONS))
                } else {
                    let q = self.oracle.as_ref().unwrap();
                    Action::Discrete(argmax(&q[g.cell(*x, *y)]))
                }
            }
            (Env::PointMass(p), EnvState::Point { pos, vel, .. }) => {
                if policy == BehaviorPolicy::Random {
                    return Action::Continuous(vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]);
                }
                let sigma = policy.pointmass_sigma();
                let a = (0..2)
                    .map(|d| {
                        let pd = PD_GAINS.0 * (p.goal[d] - pos[d]) - PD_GAINS.1 * vel[d];
                        let noise = if sigma > 0.0 {
                            Normal::new(0.0, sigma).unwrap().sample(rng)
                        } else {
                            0.0
                        };
                        (pd + noise).clamp(-1.0, 1.0)
                    })
                    .collect();
                Action::Continuous(a)
            }
            _ => unreachable!("state does not match environment"),
        }
    }
}

/// Rolls out the mixture episode by episode. Each trajectory is tagged with
/// the behavior policy that produced it.
pub fn collect_dataset(env: &Env, spec: &BehaviorSpec) -> Result<OfflineDataset> {
    spec.validate()?;
    let behavior = Behavior::new(env);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trajectories = Vec::with_capacity(spec.episodes);
    for id in 0..spec.episodes {
        let policy = spec.draw(&mut rng);
        let mut state = env.reset(&mut rng);
        let mut states = vec![env.observe(&state)];
        let (mut actions, mut rewards, mut dones) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            let action = behavior.act(env, &state, policy, &mut rng);
            let step = env.step(&state, &action)?;
            states.push(env.observe(&step.next));
            actions.push(action);
            rewards.push(step.reward);
            dones.push(step.done);
            state = step.next;
            if step.done || step.truncated {
                break;
            }
        }
        trajectories.push(Trajectory {
            id,
            states,
            actions,
            rewards,
            dones,
            behavior: Some(policy.name().to_string()),
        });
    }
    OfflineDataset::new(env.name(), env.state_dim(), env.action_spec(), trajectories)
}
