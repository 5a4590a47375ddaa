use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Action, ActionSpec, DatasetSplit, OfflineDataset, Trajectory};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    env: String,
    state_dim: usize,
    action: ActionSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActionsJson {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    id: usize,
    states: Vec<Vec<f64>>,
    actions: ActionsJson,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    behaviors: Vec<Option<String>>,
}

#[derive(Serialize, Deserialize)]
struct SplitJson {
    rate: f64,
    seed: u64,
    forget_ids: Vec<usize>,
}

/// Sidecar file holding per-trajectory behavior tags.
pub fn provenance_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn check_finite(ds: &OfflineDataset) -> Result<()> {
    for t in &ds.trajectories {
        let states = t.states.iter().flatten();
        let actions = t.actions.iter().filter_map(Action::as_continuous).flatten();
        if let Some(v) = states.chain(actions).chain(&t.rewards).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{v} in trajectory {} cannot be serialized", t.id)));
        }
    }
    Ok(())
}

/// Saves the dataset as JSONL: one header line, then one line per trajectory.
/// Behavior tags, when present, go to a `.provenance.json` sidecar.
pub fn save_dataset(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_finite(dataset)?;
    let header = Header {
        version: FORMAT_VERSION,
        env: dataset.env_name.clone(),
        state_dim: dataset.state_dim,
        action: dataset.action_spec,
    };
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for t in &dataset.trajectories {
            let actions = match dataset.action_spec {
                ActionSpec::Discrete(_) => {
                    ActionsJson::Discrete(t.actions.iter().map(|a| a.as_discrete().unwrap_or(usize::MAX)).collect())
                }
                ActionSpec::Continuous(_) => ActionsJson::Continuous(
                    t.actions.iter().map(|a| a.as_continuous().unwrap_or(&[]).to_vec()).collect(),
                ),
            };
            let line = TrajectoryLine {
                id: t.id,
                states: t.states.clone(),
                actions,
                rewards: t.rewards.clone(),
                dones: t.dones.clone(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let sidecar = provenance_path(path);
    if dataset.has_behavior_tags() {
        let prov = Provenance {
            behaviors: dataset.trajectories.iter().map(|t| t.behavior.clone()).collect(),
        };
        write_atomic(&sidecar, |w| Ok(serde_json::to_writer(w, &prov)?))?;
    } else if sidecar.exists() {
        std::fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(&ctx, "missing header line"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::format(&ctx, format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::format(&ctx, format!("unsupported version {}", header.version)));
    }
    let mut trajectories = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| Error::format(&ctx, format!("line {}: {e}", n + 2)))?;
        let actions = match (parsed.actions, header.action) {
            (ActionsJson::Discrete(a), ActionSpec::Discrete(_)) => a.into_iter().map(Action::Discrete).collect(),
            (ActionsJson::Continuous(a), ActionSpec::Continuous(_)) => a.into_iter().map(Action::Continuous).collect(),
            _ => return Err(Error::format(&ctx, format!("line {}: actions do not match header kind", n + 2))),
        };
        trajectories.push(Trajectory {
            id: parsed.id,
            states: parsed.states,
            actions,
            rewards: parsed.rewards,
            dones: parsed.dones,
            behavior: None,
        });
    }
    let sidecar = provenance_path(path);
    if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let prov: Provenance = serde_json::from_str(&text)
            .map_err(|e| Error::format(sidecar.display().to_string(), e.to_string()))?;
        if prov.behaviors.len() != trajectories.len() {
            return Err(Error::format(
                sidecar.display().to_string(),
                format!("{} tags for {} trajectories", prov.behaviors.len(), trajectories.len()),
            ));
        }
        for (t, b) in trajectories.iter_mut().zip(prov.behaviors) {
            t.behavior = b;
        }
    }
    OfflineDataset::new(header.env, header.state_dim, header.action, trajectories)
}

pub fn save_split(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let json = SplitJson {
        rate: split.rate,
        seed: split.seed,
        forget_ids: split.forget_ids.clone(),
    };
    write_atomic(path.as_ref(), |w| Ok(serde_json::to_writer(w, &json)?))
}

/// Loads a split; `n_trajectories` recovers the implied remain set.
pub fn load_split(path: impl AsRef<Path>, n_trajectories: usize) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json: SplitJson =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    DatasetSplit::from_forget_ids(json.forget_ids, n_trajectories, json.rate, json.seed)
}
