use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{ActionBatch, Real};
use crate::data::{ActionSpec, OfflineDataset};
use crate::error::{Error, Result};

/// Floor applied to per-feature standard deviations.
pub const NORM_STD_FLOOR: f64 = 1e-3;

/// Per-feature state normalization `(s - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and (population) standard deviation over every state visited
    /// in the dataset, with the std floored at [`NORM_STD_FLOOR`].
    pub fn from_dataset(dataset: &OfflineDataset) -> Result<Self> {
        let d = dataset.state_dim;
        let states: Vec<&Vec<f64>> = dataset.trajectories.iter().flat_map(|t| t.visited_states()).collect();
        if states.is_empty() {
            return Err(Error::InvalidArgument("normalization statistics of an empty dataset".into()));
        }
        let n = states.len() as f64;
        let mut mean = vec![0.0; d];
        for s in &states {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for s in &states {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m).powi(2) / n;
            }
        }
        Ok(NormStats {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(NORM_STD_FLOOR)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<F: Real>(&self, states: &[impl AsRef<[f64]>]) -> Array2<F> {
        let d = self.dim();
        Array2::from_shape_fn((states.len(), d), |(i, j)| {
            F::c((states[i].as_ref()[j] - self.mean[j]) / self.std[j])
        })
    }
}

/// A sampled mini-batch of normalized transitions.
#[derive(Clone, Debug)]
pub struct Batch<F: Real = f32> {
    pub states: Array2<F>,
    pub actions: ActionBatch<F>,
    pub rewards: Vec<F>,
    pub next_states: Array2<F>,
    /// 1 for terminal transitions, else 0.
    pub dones: Vec<F>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Batch<G> {
        Batch {
            states: self.states.mapv(|v| G::c(v.f64())),
            actions: self.actions.cast(),
            rewards: self.rewards.iter().map(|v| G::c(v.f64())).collect(),
            next_states: self.next_states.mapv(|v| G::c(v.f64())),
            dones: self.dones.iter().map(|v| G::c(v.f64())).collect(),
        }
    }
}

/// All transitions of a set of trajectories, flattened and normalized.
#[derive(Clone, Debug)]
pub struct TransitionPool<F: Real = f32> {
    all: Batch<F>,
    /// Originating trajectory id of each transition.
    pub trajectory_ids: Vec<usize>,
}

impl<F: Real> TransitionPool<F> {
    /// Pools the transitions of `ids` (or of every trajectory when `None`).
    pub fn new(dataset: &OfflineDataset, ids: Option<&[usize]>, norm: &NormStats) -> Result<Self> {
        if norm.dim() != dataset.state_dim {
            return Err(Error::Incompatible(format!(
                "normalization has width {}, dataset states have {}",
                norm.dim(),
                dataset.state_dim
            )));
        }
        let all_ids: Vec<usize>;
        let ids = match ids {
            Some(ids) => ids,
            None => {
                all_ids = (0..dataset.len()).collect();
                &all_ids
            }
        };
        let mut states = Vec::new();
        let mut next_states = Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        let mut cont = Vec::new();
        let mut disc = Vec::new();
        let mut trajectory_ids = Vec::new();
        for &id in ids {
            let t = dataset
                .trajectories
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory id {id} out of range")))?;
            for i in 0..t.len() {
                states.push(&t.states[i]);
                next_states.push(&t.states[i + 1]);
                rewards.push(F::c(t.rewards[i]));
                dones.push(if t.dones[i] { F::one() } else { F::zero() });
                match &t.actions[i] {
                    crate::data::Action::Continuous(a) => cont.extend(a.iter().map(|&v| F::c(v))),
                    crate::data::Action::Discrete(a) => disc.push(*a),
                }
                trajectory_ids.push(id);
            }
        }
        let n = rewards.len();
        let actions = match dataset.action_spec {
            ActionSpec::Discrete(_) => ActionBatch::Discrete(disc),
            ActionSpec::Continuous(d) => ActionBatch::Continuous(Array2::from_shape_vec((n, d), cont).unwrap()),
        };
        Ok(TransitionPool {
            all: Batch {
                states: norm.apply(&states),
                actions,
                rewards,
                next_states: norm.apply(&next_states),
                dones,
            },
            trajectory_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn all(&self) -> &Batch<F> {
        &self.all
    }

    pub fn gather(&self, rows: &[usize]) -> Batch<F> {
        Batch {
            states: self.all.states.select(Axis(0), rows),
            actions: self.all.actions.select(rows),
            rewards: rows.iter().map(|&i| self.all.rewards[i]).collect(),
            next_states: self.all.next_states.select(Axis(0), rows),
            dones: rows.iter().map(|&i| self.all.dones[i]).collect(),
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch<F>> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty transition pool".into()));
        }
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        Ok(self.gather(&rows))
    }
}
