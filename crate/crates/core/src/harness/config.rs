use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auditor::AuditConfig;
use crate::deleter::{Method, UnlearnConfig};
use crate::envs::{BehaviorSpec, Env};
use crate::error::{Error, Result};
use crate::offline_rl::{Algo, TrainConfig};

/// Everything one experiment needs; mirrors the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Behavior mixture, e.g. `expert:0.5,medium:0.5`.
    pub mix: String,
    pub episodes: usize,
    pub algo: Algo,
    pub unlearning_rate: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Largest allowed `(K + H) / training steps` for `unlearn`.
    pub max_unlearn_ratio: f64,
    pub eval_episodes: usize,
    /// At most this many remaining-set trajectories are audited per cell.
    pub dm_audit_limit: usize,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub audit: AuditConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset("gridworld").expect("built-in preset")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPreset {
    #[default]
    Grid,
    Poisoning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub preset: BenchPreset,
    pub methods: Vec<BenchMethod>,
    pub rates: Vec<f64>,
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub poison_fraction: f64,
    pub poison_factor: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            preset: BenchPreset::Grid,
            methods: vec![
                BenchMethod::Original,
                BenchMethod::Unlearn(Method::Retrain),
                BenchMethod::Unlearn(Method::Trajdeleter),
                BenchMethod::Unlearn(Method::Finetune),
            ],
            rates: vec![0.05],
            ks: vec![800],
            lambdas: vec![1.0],
            poison_fraction: 0.05,
            poison_factor: 1.5,
        }
    }
}

/// A bench row's agent: the untouched original or the output of a method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BenchMethod {
    Original,
    Unlearn(Method),
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Original => "original",
            BenchMethod::Unlearn(m) => m.name(),
        }
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            Ok(BenchMethod::Original)
        } else {
            Ok(BenchMethod::Unlearn(s.parse()?))
        }
    }
}

impl TryFrom<String> for BenchMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BenchMethod> for String {
    fn from(m: BenchMethod) -> String {
        m.name().to_string()
    }
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for an environment: IQL on 500 mixed gridworld
    /// episodes, TD3+BC on 200 expert pointmass episodes.
    pub fn preset(env: &str) -> Result<Self> {
        let (mix, episodes, algo) = match env {
            "gridworld" => ("expert:0.5,medium:0.5", 500, Algo::Iql),
            "pointmass" => ("expert:1.0", 200, Algo::Td3bc),
            other => return Err(Error::Usage(format!("unknown environment '{other}'"))),
        };
        Ok(ExperimentConfig {
            env: env.to_string(),
            mix: mix.to_string(),
            episodes,
            algo,
            unlearning_rate: 0.05,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs").join(env),
            max_unlearn_ratio: 0.05,
            eval_episodes: 100,
            dm_audit_limit: 100,
            train: TrainConfig::default(),
            unlearn: UnlearnConfig::default(),
            audit: AuditConfig::default(),
            bench: BenchConfig::default(),
        })
    }

    /// Parses a TOML file. Keys left out take the preset values of the
    /// file's `env` (gridworld when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        let env = raw.get("env").and_then(|v| v.as_str()).unwrap_or("gridworld");
        let mut merged = toml::Table::try_from(ExperimentConfig::preset(env)?)
            .map_err(|e| Error::format("config", e.to_string()))?;
        merge(&mut merged, raw);
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn env(&self) -> Result<Env> {
        Env::from_name(&self.env)
    }

    pub fn behavior(&self, seed: u64) -> Result<BehaviorSpec> {
        BehaviorSpec::new(BehaviorSpec::parse_mixture(&self.mix)?, self.episodes, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.env()?;
        self.behavior(0)?;
        self.train.validate()?;
        self.audit.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let in_unit = |r: f64| r > 0.0 && r < 1.0;
        if !in_unit(self.unlearning_rate) || !self.bench.rates.iter().all(|&r| in_unit(r)) {
            return bad("unlearning rates must lie in (0, 1)".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.max_unlearn_ratio > 0.0) {
            return bad("max_unlearn_ratio must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if self.bench.lambdas.iter().any(|&l| !(l >= 0.0)) {
            return bad("bench lambdas must be >= 0".into());
        }
        if self.bench.methods.is_empty() || self.bench.ks.is_empty() || self.bench.lambdas.is_empty() {
            return bad("bench methods, ks and lambdas must not be empty".into());
        }
        let poison = &self.bench;
        if poison.preset == BenchPreset::Poisoning && !(poison.poison_fraction > 0.0 && poison.poison_fraction < 1.0) {
            return bad("poison_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Rejects `K + H` above `max_unlearn_ratio` of the training steps.
    pub fn check_unlearn_budget(&self, unlearn: &UnlearnConfig, train_steps: usize) -> Result<()> {
        if unlearn.method == Method::Retrain {
            return Ok(());
        }
        let used = unlearn.k + unlearn.h;
        let cap = self.max_unlearn_ratio * train_steps as f64;
        if used as f64 > cap + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "K+H = {used} exceeds {:.3} x {train_steps} training steps",
                self.max_unlearn_ratio
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
