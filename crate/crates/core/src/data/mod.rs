//! Trajectory datasets: representation, persistence, splitting into
//! forget/remain sets, and the two dataset transforms (random rewards and
//! action poisoning).

pub(crate) mod io;
mod split;
mod transform;

pub use io::{load_dataset, load_split, save_dataset, save_split};
pub use split::{split_dataset, split_dataset_in_stratum, DatasetSplit};
pub use transform::{dataset_stats, poison_actions, random_reward_transform, DatasetStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim_or_count", rename_all = "lowercase")]
pub enum ActionSpec {
    Continuous(usize),
    Discrete(usize),
}

impl ActionSpec {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpec::Discrete(_))
    }

    /// Width of an action row: dimension, or 1 for an index.
    pub fn width(&self) -> usize {
        match self {
            ActionSpec::Continuous(d) => *d,
            ActionSpec::Discrete(_) => 1,
        }
    }

    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpec::Continuous(d), Action::Continuous(a)) => {
                if a.len() != *d {
                    return Err(Error::InvalidAction(format!("expected {d} components, got {}", a.len())));
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("action component".into()));
                }
                Ok(())
            }
            (ActionSpec::Discrete(n), Action::Discrete(i)) => {
                if i >= n {
                    return Err(Error::InvalidAction(format!("index {i} outside [0, {n})")));
                }
                Ok(())
            }
            _ => Err(Error::InvalidAction(format!("{action:?} does not match {self:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

impl Action {
    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(a) => Some(a),
            Action::Discrete(_) => None,
        }
    }

    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

/// One environment step `<s, a, r, s', done>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// One episode, stored column-wise: `states` has one more entry than the
/// other columns because it ends with the final next-state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Name of the behavior policy that generated the episode, if known.
    pub behavior: Option<String>,
}

impl Trajectory {
    pub fn from_transitions(id: usize, transitions: Vec<Transition>) -> Result<Self> {
        let Some(first) = transitions.first() else {
            return Err(Error::InvalidArgument("a trajectory needs at least one transition".into()));
        };
        let mut states = vec![first.state.clone()];
        let mut actions = Vec::with_capacity(transitions.len());
        let mut rewards = Vec::with_capacity(transitions.len());
        let mut dones = Vec::with_capacity(transitions.len());
        for (t, tr) in transitions.into_iter().enumerate() {
            if &tr.state != states.last().unwrap() {
                return Err(Error::InvalidArgument(format!(
                    "transition {t} does not start where transition {} ended",
                    t.saturating_sub(1)
                )));
            }
            states.push(tr.next_state);
            actions.push(tr.action);
            rewards.push(tr.reward);
            dones.push(tr.done);
        }
        let traj = Trajectory {
            id,
            states,
            actions,
            rewards,
            dones,
            behavior: None,
        };
        traj.check_structure()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// States `s_0 .. s_{T-1}`, i.e. without the final next-state.
    pub fn visited_states(&self) -> &[Vec<f64>] {
        &self.states[..self.len()]
    }

    pub fn transition(&self, t: usize) -> Transition {
        Transition {
            state: self.states[t].clone(),
            action: self.actions[t].clone(),
            reward: self.rewards[t],
            next_state: self.states[t + 1].clone(),
            done: self.dones[t],
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(move |t| self.transition(t))
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn check_structure(&self) -> Result<()> {
        let t = self.rewards.len();
        if t == 0 {
            return Err(Error::InvalidArgument(format!("trajectory {} is empty", self.id)));
        }
        if self.states.len() != t + 1 || self.actions.len() != t || self.dones.len() != t {
            return Err(Error::InvalidArgument(format!(
                "trajectory {}: {} states, {} actions, {} rewards, {} dones",
                self.id,
                self.states.len(),
                self.actions.len(),
                t,
                self.dones.len()
            )));
        }
        if self.dones[..t - 1].iter().any(|&d| d) {
            return Err(Error::InvalidArgument(format!(
                "trajectory {} has done set before its final transition",
                self.id
            )));
        }
        if let Some(r) = self.rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward {r} in trajectory {}", self.id)));
        }
        Ok(())
    }
}

/// A fixed collection of trajectories with ids dense in `[0, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env_name: String,
    pub state_dim: usize,
    pub action_spec: ActionSpec,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    /// Validates every invariant and builds the dataset.
    pub fn new(
        env_name: impl Into<String>,
        state_dim: usize,
        action_spec: ActionSpec,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        let ds = OfflineDataset {
            env_name: env_name.into(),
            state_dim,
            action_spec,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.id != i {
                return Err(Error::InvalidArgument(format!(
                    "trajectory at position {i} has id {}; ids must be dense and ordered",
                    traj.id
                )));
            }
            traj.check_structure()?;
            for s in &traj.states {
                if s.len() != self.state_dim {
                    return Err(Error::Shape(format!(
                        "trajectory {i} has a state of width {}, dataset declares {}",
                        s.len(),
                        self.state_dim
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("state component in trajectory {i}")));
                }
            }
            for a in &traj.actions {
                self.action_spec.validate(a)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// New dataset holding the given trajectories, renumbered densely in
    /// the order given.
    pub fn select(&self, ids: &[usize]) -> Result<OfflineDataset> {
        let mut trajectories = Vec::with_capacity(ids.len());
        for (new_id, &id) in ids.iter().enumerate() {
            let traj = self
                .trajectories
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory id {id} out of range")))?;
            trajectories.push(Trajectory {
                id: new_id,
                ..traj.clone()
            });
        }
        Ok(OfflineDataset {
            trajectories,
            ..self.empty_like()
        })
    }

    pub fn empty_like(&self) -> OfflineDataset {
        OfflineDataset {
            env_name: self.env_name.clone(),
            state_dim: self.state_dim,
            action_spec: self.action_spec,
            trajectories: Vec::new(),
        }
    }

    pub fn has_behavior_tags(&self) -> bool {
        self.trajectories.iter().any(|t| t.behavior.is_some())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn tr(s: f64, a: usize, r: f64, s2: f64, done: bool) -> Transition {
        Transition {
            state: vec![s],
            action: Action::Discrete(a),
            reward: r,
            next_state: vec![s2],
            done,
        }
    }

    #[test]
    fn builds_from_chained_transitions() {
        let traj = Trajectory::from_transitions(0, vec![tr(0.0, 1, 0.0, 1.0, false), tr(1.0, 0, 1.0, 2.0, true)]).unwrap();
        assert_eq!(traj.states, vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert_eq!(traj.transition(1), tr(1.0, 0, 1.0, 2.0, true));
    }

    #[test]
    fn rejects_broken_chain_and_early_done() {
        assert!(Trajectory::from_transitions(0, vec![tr(0.0, 1, 0.0, 1.0, false), tr(5.0, 0, 1.0, 2.0, true)]).is_err());
        assert!(Trajectory::from_transitions(0, vec![tr(0.0, 1, 0.0, 1.0, true), tr(1.0, 0, 1.0, 2.0, false)]).is_err());
        assert!(Trajectory::from_transitions(0, vec![]).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_action_and_sparse_ids() {
        let traj = Trajectory::from_transitions(0, vec![tr(0.0, 3, 0.0, 1.0, false)]).unwrap();
        assert!(OfflineDataset::new("x", 1, ActionSpec::Discrete(3), vec![traj.clone()]).is_err());
        let shifted = Trajectory { id: 1, ..traj };
        assert!(OfflineDataset::new("x", 1, ActionSpec::Discrete(4), vec![shifted]).is_err());
    }

    #[test]
    fn select_renumbers() {
        let ds = testutil::random_dataset(1, 6, true);
        let sub = ds.select(&[4, 1]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.trajectories[0].id, 0);
        assert_eq!(sub.trajectories[0].rewards, ds.trajectories[4].rewards);
        sub.validate().unwrap();
    }
}
