//! Built-in toy environments, behavior-policy data collection, return
//! evaluation and a tabular value-iteration oracle for the gridworld.

mod behavior;
mod eval;
mod gridworld;
mod pointmass;

pub use behavior::{collect_dataset, BehaviorPolicy, BehaviorSpec};
pub use eval::{discounted_return, evaluate_policy, random_actor, Actor, EvalReport};
pub use gridworld::{argmax as gridworld_argmax, value_iteration_oracle, GridWorld, QTable, GRID_ACTIONS};
pub use pointmass::PointMass;

use rand::Rng;

use crate::data::{Action, ActionSpec};
use crate::error::{Error, Result};

/// Discount used throughout.
pub const GAMMA: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    GridWorld(GridWorld),
    PointMass(PointMass),
}

/// Internal environment state; observations are derived from it.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvState {
    Grid { x: usize, y: usize, t: usize },
    Point { pos: [f64; 2], vel: [f64; 2], t: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    /// Terminal (goal reached).
    pub done: bool,
    /// Horizon reached without termination.
    pub truncated: bool,
}

impl Env {
    pub fn from_name(name: &str) -> Result<Env> {
        match name {
            "gridworld" => Ok(Env::GridWorld(GridWorld::default())),
            "pointmass" => Ok(Env::PointMass(PointMass::default())),
            other => Err(Error::Usage(format!(
                "unknown environment '{other}' (expected gridworld or pointmass)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::GridWorld(_) => "gridworld",
            Env::PointMass(_) => "pointmass",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Env::GridWorld(g) => g.width * g.height,
            Env::PointMass(_) => 4,
        }
    }

    pub fn action_spec(&self) -> ActionSpec {
        match self {
            Env::GridWorld(_) => ActionSpec::Discrete(GRID_ACTIONS),
            Env::PointMass(_) => ActionSpec::Continuous(2),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::GridWorld(g) => g.max_steps,
            Env::PointMass(p) => p.horizon,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        match self {
            Env::GridWorld(g) => g.reset(),
            Env::PointMass(p) => p.reset(rng),
        }
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match (self, state) {
            (Env::GridWorld(g), EnvState::Grid { x, y, .. }) => g.encode(*x, *y),
            (Env::PointMass(_), EnvState::Point { pos, vel, .. }) => vec![pos[0], pos[1], vel[0], vel[1]],
            _ => panic!("state does not belong to {}", self.name()),
        }
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<StepResult> {
        self.action_spec().validate(action)?;
        match (self, state) {
            (Env::GridWorld(g), EnvState::Grid { x, y, t }) => Ok(g.step(*x, *y, *t, action.as_discrete().unwrap())),
            (Env::PointMass(p), EnvState::Point { pos, vel, t }) => Ok(p.step(*pos, *vel, *t, action.as_continuous().unwrap())),
            _ => Err(Error::Incompatible(format!("state does not belong to {}", self.name()))),
        }
    }
}
