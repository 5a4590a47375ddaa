//! Membership auditing of trained agents against fine-tuned shadow copies.

mod stats;

pub use stats::{
    grubbs_critical, grubbs_outlier, precision_recall_f1, t_cdf, t_inv_cdf, wasserstein1d, GrubbsResult, PrfScores,
};

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{io::write_atomic, OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::offline_rl::{finetune, Agent};

const PERTURB_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub n_shadows: usize,
    pub shadow_finetune_steps: usize,
    pub perturb_rounds: usize,
    pub noise_std: f64,
    pub grubbs_alpha: f64,
    /// First perturbation round uses the unperturbed states.
    pub include_clean: bool,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n_shadows: 5,
            shadow_finetune_steps: 1000,
            perturb_rounds: 5,
            noise_std: 0.05,
            grubbs_alpha: 1e-4,
            include_clean: true,
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_shadows < 2 {
            return bad(format!("n_shadows must be >= 2, got {}", self.n_shadows));
        }
        if self.perturb_rounds < 1 {
            return bad("perturb_rounds must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if !(self.grubbs_alpha > 0.0 && self.grubbs_alpha < 1.0) {
            return bad(format!("grubbs_alpha must be in (0,1), got {}", self.grubbs_alpha));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Member,
    Removed,
}

impl Verdict {
    pub fn is_member(self) -> bool {
        self == Verdict::Member
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Member => "member",
            Verdict::Removed => "removed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub trajectory_id: usize,
    /// Sorted ascending; `n_shadows * perturb_rounds` entries.
    pub reference_distances: Vec<f64>,
    pub d_target: f64,
    pub grubbs_statistic: f64,
    pub grubbs_critical: f64,
    pub verdict: Verdict,
}

impl AuditRecord {
    pub fn reference_mean_std(&self) -> (f64, f64) {
        stats::mean_std(&self.reference_distances)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub records: Vec<AuditRecord>,
    /// Percent of records judged `member`.
    pub ppr: f64,
}

impl AuditSummary {
    pub fn verdicts(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.verdict.is_member()).collect()
    }

    /// Columns: trajectory_id, d_target, ref_mean, ref_std, grubbs_stat, grubbs_crit, verdict.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "trajectory_id,d_target,ref_mean,ref_std,grubbs_stat,grubbs_crit,verdict").unwrap();
        for r in &self.records {
            let (m, s) = r.reference_mean_std();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.trajectory_id,
                r.d_target,
                m,
                s,
                r.grubbs_statistic,
                r.grubbs_critical,
                r.verdict.name()
            )
            .unwrap();
        }
        write_atomic(path.as_ref(), |w| w.write_all(&out))
    }
}

/// `n_shadows` independent fine-tunings of `original` on `dataset`, in parallel.
pub fn make_shadow_agents(original: &Agent, dataset: &OfflineDataset, cfg: &AuditConfig) -> Result<Vec<Agent>> {
    cfg.validate()?;
    original.check_compatible(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.n_shadows).map(|_| rng.next_u64()).collect();
    seeds
        .into_par_iter()
        .map(|s| finetune(original, dataset, cfg.shadow_finetune_steps, s))
        .collect()
}

/// `rounds` gaussian-noised copies of `states`; with `include_clean` the
/// first copy is the input itself.
pub fn perturb_states<R: Rng + ?Sized>(
    states: &[Vec<f64>],
    rounds: usize,
    std: f64,
    include_clean: bool,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("noise_std {std}: {e}")))?;
    Ok((0..rounds)
        .map(|h| {
            if (include_clean && h == 0) || std == 0.0 {
                return states.to_vec();
            }
            states
                .iter()
                .map(|s| s.iter().map(|x| x + noise.sample(rng)).collect())
                .collect()
        })
        .collect())
}

/// `Q_1(s, pi_greedy(s))` along a state sequence.
pub fn value_vector(agent: &Agent, states: &[Vec<f64>]) -> Result<Vec<f64>> {
    agent.greedy_values(states)
}

/// Elementwise mean; each column is summed in sorted order so the result
/// does not depend on the order of `vectors`.
fn elementwise_mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let len = vectors[0].len();
    (0..len)
        .map(|t| {
            let mut col: Vec<f64> = vectors.iter().map(|v| v[t]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / col.len() as f64
        })
        .collect()
}

pub fn audit_trajectory(
    target: &Agent,
    shadows: &[Agent],
    trajectory: &Trajectory,
    cfg: &AuditConfig,
) -> Result<AuditRecord> {
    if shadows.is_empty() {
        return Err(Error::InvalidArgument("audit needs at least one shadow agent".into()));
    }
    // one stream per trajectory, independent of audit order
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PERTURB_SALT);
    rng.set_stream(trajectory.id as u64);
    let clean = trajectory.states[..trajectory.len()].to_vec();
    let rounds = perturb_states(&clean, cfg.perturb_rounds, cfg.noise_std, cfg.include_clean, &mut rng)?;

    let clean_vectors = shadows.iter().map(|s| value_vector(s, &clean)).collect::<Result<Vec<_>>>()?;
    let q_bar = elementwise_mean(&clean_vectors);
    let mut reference = Vec::with_capacity(shadows.len() * rounds.len());
    for (shadow, clean_vec) in shadows.iter().zip(&clean_vectors) {
        for (h, states) in rounds.iter().enumerate() {
            let v = if h == 0 && cfg.include_clean || cfg.noise_std == 0.0 {
                clean_vec.clone()
            } else {
                value_vector(shadow, states)?
            };
            reference.push(wasserstein1d(&q_bar, &v)?);
        }
    }
    reference.sort_by(f64::total_cmp);
    let d_target = wasserstein1d(&q_bar, &value_vector(target, &clean)?)?;
    let g = grubbs_outlier(&reference, d_target, cfg.grubbs_alpha)?;
    Ok(AuditRecord {
        trajectory_id: trajectory.id,
        reference_distances: reference,
        d_target,
        grubbs_statistic: g.statistic,
        grubbs_critical: g.critical,
        verdict: if g.is_outlier { Verdict::Removed } else { Verdict::Member },
    })
}

/// Percent of `member` verdicts; 0 for no records.
pub fn ppr(records: &[AuditRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let members = records.iter().filter(|r| r.verdict.is_member()).count();
    100.0 * members as f64 / records.len() as f64
}

/// Audits every trajectory (in parallel) and reports the member percentage.
pub fn audit_dataset(
    target: &Agent,
    shadows: &[Agent],
    trajectories: &[&Trajectory],
    cfg: &AuditConfig,
) -> Result<AuditSummary> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to audit".into()));
    }
    let mut records = trajectories
        .par_iter()
        .map(|t| audit_trajectory(target, shadows, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.trajectory_id);
    let ppr = ppr(&records);
    Ok(AuditSummary { records, ppr })
}

/// Mean squared TD residual `r + gamma (1-d) Q(s', pi(s')) - Q(s, a)` over
/// the transitions of the selected trajectories.
pub fn td_error_diagnostic(agent: &Agent, dataset: &OfflineDataset, ids: Option<&[usize]>) -> Result<f64> {
    let pool = agent.pool(dataset, ids)?;
    let b = pool.all();
    let critic = &agent.critics[0];
    let q = critic.q(b.states.view(), &b.actions)?;
    let next_a = agent.policy.greedy(b.next_states.view())?;
    let q_next = critic.q(b.next_states.view(), &next_a)?;
    let mut total = 0.0;
    for i in 0..b.len() {
        let y = b.rewards[i] as f64 + agent.gamma * (1.0 - b.dones[i] as f64) * q_next[i] as f64;
        total += (y - q[i] as f64).powi(2);
    }
    let mean = total / b.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("td error".into()));
    }
    Ok(mean)
}

/// Summary JSON contents: PPR plus scores when ground truth is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ppr: f64,
    pub n_trajectories: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PrfScores>,
}
