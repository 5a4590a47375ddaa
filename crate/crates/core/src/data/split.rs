use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::OfflineDataset;
use crate::error::{Error, Result};

/// Partition of trajectory ids into a forget set and a remain set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub forget_ids: Vec<usize>,
    pub remain_ids: Vec<usize>,
    pub rate: f64,
    pub seed: u64,
}

impl DatasetSplit {
    /// Builds a split from an explicit forget set over `n` trajectories.
    pub fn from_forget_ids(mut forget_ids: Vec<usize>, n: usize, rate: f64, seed: u64) -> Result<Self> {
        forget_ids.sort_unstable();
        forget_ids.dedup();
        if let Some(&bad) = forget_ids.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("forget id {bad} outside [0, {n})")));
        }
        let mut in_forget = vec![false; n];
        forget_ids.iter().for_each(|&i| in_forget[i] = true);
        let remain_ids = (0..n).filter(|&i| !in_forget[i]).collect();
        Ok(DatasetSplit {
            forget_ids,
            remain_ids,
            rate,
            seed,
        })
    }

    pub fn n_trajectories(&self) -> usize {
        self.forget_ids.len() + self.remain_ids.len()
    }

    pub fn is_forgotten(&self, id: usize) -> bool {
        self.forget_ids.binary_search(&id).is_ok()
    }
}

/// `ceil(rate * n)`, tolerant to representation error in `rate`.
pub(crate) fn forget_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("rate must lie in (0, 1), got {rate}")));
    }
    Ok(())
}

/// Samples `ceil(rate * N)` ids uniformly without replacement.
pub fn split_dataset(dataset: &OfflineDataset, rate: f64, seed: u64) -> Result<DatasetSplit> {
    check_rate(rate)?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let k = forget_count(rate, n);
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "rate {rate} forgets all {n} trajectories; nothing would remain"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rand::seq::index::sample(&mut rng, n, k).into_vec();
    DatasetSplit::from_forget_ids(ids, n, rate, seed)
}

/// Like [`split_dataset`], but draws the forget set only from trajectories
/// generated by the named behavior policy. The forget-set size is still
/// `ceil(rate * N)` over the whole dataset.
pub fn split_dataset_in_stratum(dataset: &OfflineDataset, rate: f64, seed: u64, behavior: &str) -> Result<DatasetSplit> {
    check_rate(rate)?;
    let n = dataset.len();
    let stratum: Vec<usize> = dataset
        .trajectories
        .iter()
        .filter(|t| t.behavior.as_deref() == Some(behavior))
        .map(|t| t.id)
        .collect();
    let k = forget_count(rate, n);
    if k > stratum.len() {
        return Err(Error::InvalidArgument(format!(
            "stratum '{behavior}' has {} trajectories, {k} requested",
            stratum.len()
        )));
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!("rate {rate} leaves nothing to remain")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, stratum.len(), k);
    DatasetSplit::from_forget_ids(picks.iter().map(|i| stratum[i]).collect(), n, rate, seed)
}
