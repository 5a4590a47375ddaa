use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::split::forget_count;
use super::{Action, ActionSpec, DatasetSplit, OfflineDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DatasetStats {
    pub r_min: f64,
    pub r_max: f64,
    pub n_trajectories: usize,
    pub n_transitions: usize,
    /// Mean undiscounted return per trajectory.
    pub mean_return: f64,
}

pub fn dataset_stats(dataset: &OfflineDataset) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("statistics of an empty dataset".into()));
    }
    let rewards = dataset.trajectories.iter().flat_map(|t| t.rewards.iter().copied());
    let (r_min, r_max) = rewards.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let total: f64 = dataset.trajectories.iter().map(|t| t.undiscounted_return()).sum();
    Ok(DatasetStats {
        r_min,
        r_max,
        n_trajectories: dataset.len(),
        n_transitions: dataset.num_transitions(),
        mean_return: total / dataset.len() as f64,
    })
}

/// Replaces every reward of the forget-set trajectories with an i.i.d.
/// uniform draw from `[r_min, r_max]` of the whole original dataset.
pub fn random_reward_transform(dataset: &OfflineDataset, split: &DatasetSplit, seed: u64) -> Result<OfflineDataset> {
    let stats = dataset_stats(dataset)?;
    let mut out = dataset.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &id in &split.forget_ids {
        let traj = out
            .trajectories
            .get_mut(id)
            .ok_or_else(|| Error::InvalidArgument(format!("forget id {id} outside dataset")))?;
        for r in &mut traj.rewards {
            *r = if stats.r_max > stats.r_min {
                rng.random_range(stats.r_min..=stats.r_max)
            } else {
                stats.r_min
            };
        }
    }
    Ok(out)
}

/// Poisons `ceil(fraction * N)` randomly chosen trajectories: every action
/// component becomes `factor` times that component's mean over the
/// trajectory. Returns the poisoned dataset and the sorted poisoned ids.
pub fn poison_actions(
    dataset: &OfflineDataset,
    fraction: f64,
    factor: f64,
    seed: u64,
) -> Result<(OfflineDataset, Vec<usize>)> {
    let ActionSpec::Continuous(dim) = dataset.action_spec else {
        return Err(Error::Incompatible("action poisoning needs continuous actions".into()));
    };
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("poison fraction must lie in (0, 1), got {fraction}")));
    }
    if !factor.is_finite() {
        return Err(Error::NonFinite("poison factor".into()));
    }
    let n = dataset.len();
    let k = forget_count(fraction, n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    let mut out = dataset.clone();
    for &id in &ids {
        let traj = &mut out.trajectories[id];
        let mut mean = vec![0.0; dim];
        for a in &traj.actions {
            for (m, v) in mean.iter_mut().zip(a.as_continuous().unwrap()) {
                *m += v;
            }
        }
        let len = traj.actions.len() as f64;
        let poisoned: Vec<f64> = mean.iter().map(|m| factor * m / len).collect();
        for a in &mut traj.actions {
            *a = Action::Continuous(poisoned.clone());
        }
    }
    Ok((out, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::random_dataset;
    use crate::data::Trajectory;

    fn continuous_traj(id: usize, actions: &[f64], rewards: &[f64]) -> Trajectory {
        Trajectory {
            id,
            states: (0..=actions.len()).map(|i| vec![i as f64]).collect(),
            actions: actions.iter().map(|&a| Action::Continuous(vec![a])).collect(),
            rewards: rewards.to_vec(),
            dones: vec![false; actions.len()],
            behavior: None,
        }
    }

    #[test]
    fn stats_by_hand() {
        let ds = OfflineDataset::new(
            "t",
            1,
            ActionSpec::Continuous(1),
            vec![continuous_traj(0, &[0.0; 3], &[1.0, 1.0, 1.0]), continuous_traj(1, &[0.0], &[2.0])],
        )
        .unwrap();
        let s = dataset_stats(&ds).unwrap();
        assert_eq!((s.r_min, s.r_max, s.mean_return), (1.0, 2.0, 2.5));
        assert_eq!((s.n_trajectories, s.n_transitions), (2, 4));

        let zero = OfflineDataset::new("t", 1, ActionSpec::Continuous(1), vec![continuous_traj(0, &[0.0; 2], &[0.0, 0.0])])
            .unwrap();
        let s = dataset_stats(&zero).unwrap();
        assert_eq!((s.r_min, s.r_max, s.mean_return), (0.0, 0.0, 0.0));
        assert!(dataset_stats(&zero.empty_like()).is_err());
    }

    #[test]
    fn constant_rewards_stay_constant() {
        let trajs = (0..4).map(|i| continuous_traj(i, &[0.1; 3], &[1.0; 3])).collect();
        let ds = OfflineDataset::new("t", 1, ActionSpec::Continuous(1), trajs).unwrap();
        let split = DatasetSplit::from_forget_ids(vec![1, 2], 4, 0.5, 0).unwrap();
        assert_eq!(random_reward_transform(&ds, &split, 3).unwrap(), ds);
    }

    #[test]
    fn empty_forget_set_is_identity() {
        let ds = random_dataset(5, 10, true);
        let split = DatasetSplit::from_forget_ids(vec![], 10, 0.1, 0).unwrap();
        assert_eq!(random_reward_transform(&ds, &split, 3).unwrap(), ds);
    }

    #[test]
    fn random_rewards_stay_in_bounds_and_are_local() {
        let mut trajs: Vec<Trajectory> = (0..101).map(|i| continuous_traj(i, &[0.0; 100], &[0.5; 100])).collect();
        trajs[100].rewards[0] = -2.0;
        trajs[100].rewards[1] = 3.0;
        let ds = OfflineDataset::new("t", 1, ActionSpec::Continuous(1), trajs).unwrap();
        let split = DatasetSplit::from_forget_ids((0..100).collect(), 101, 0.99, 0).unwrap();
        let out = random_reward_transform(&ds, &split, 17).unwrap();
        let drawn: Vec<f64> = out.trajectories[..100].iter().flat_map(|t| t.rewards.clone()).collect();
        assert_eq!(drawn.len(), 10_000);
        assert!(drawn.iter().all(|&r| (-2.0..=3.0).contains(&r)));
        let mean = drawn.iter().sum::<f64>() / drawn.len() as f64;
        // uniform on [-2, 3]: sd = 5/sqrt(12)
        let se = 5.0 / 12f64.sqrt() / 100.0;
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
        assert_eq!(out.trajectories[100], ds.trajectories[100]);
    }

    #[test]
    fn poisoning_by_hand() {
        let trajs = vec![continuous_traj(0, &[0.2, 0.4], &[0.0, 0.0])];
        let mut ds = OfflineDataset::new("t", 1, ActionSpec::Continuous(1), trajs).unwrap();
        // fraction 0.5 of one trajectory -> ceil = 1
        let (out, ids) = poison_actions(&ds, 0.5, 1.5, 0).unwrap();
        assert_eq!(ids, vec![0]);
        for a in &out.trajectories[0].actions {
            assert!((a.as_continuous().unwrap()[0] - 0.45).abs() < 1e-12);
        }
        ds.trajectories[0].actions = vec![Action::Continuous(vec![0.3]); 2];
        let (out, _) = poison_actions(&ds, 0.5, 1.0, 0).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn poisoning_touches_only_selected() {
        let ds = random_dataset(8, 20, false);
        let (out, ids) = poison_actions(&ds, 0.05, 1.5, 4).unwrap();
        assert_eq!(ids.len(), 1);
        for (a, b) in ds.trajectories.iter().zip(&out.trajectories) {
            if a.id == ids[0] {
                assert_eq!(a.states, b.states);
                assert_eq!(a.rewards, b.rewards);
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(matches!(
            poison_actions(&random_dataset(8, 20, true), 0.05, 1.5, 4),
            Err(Error::Incompatible(_))
        ));
    }
}
