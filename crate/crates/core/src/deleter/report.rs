use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, StepRecord};
use crate::data::io::write_atomic;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forgetting,
    Convergence,
    Finetune,
    Retrain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Forgetting => "forgetting",
            Phase::Convergence => "convergence",
            Phase::Finetune => "finetune",
            Phase::Retrain => "retrain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: Phase,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Mean `|Q' - Q|`; only tracked where it is cheap to do so.
    pub critic_gap: Option<f64>,
}

impl TraceRow {
    pub(crate) fn new(step: usize, phase: Phase, r: StepRecord, critic_gap: Option<f64>) -> Self {
        TraceRow {
            step,
            phase,
            actor_loss: r.actor_loss,
            critic_loss: r.critic_loss,
            critic_gap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub method: Method,
    /// Update loop only, excluding I/O and diagnostics.
    pub wall_time_seconds: f64,
    pub forgetting_seconds: f64,
    pub steps_used: usize,
    pub pre_return: Option<f64>,
    pub post_return: Option<f64>,
    /// Mean `|Q' - Q|` over all `D_m` transitions when convergence starts/ends.
    pub critic_gap_start: Option<f64>,
    pub critic_gap_end: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl UnlearnReport {
    pub fn new(method: Method, steps_used: usize) -> Self {
        UnlearnReport {
            method,
            wall_time_seconds: 0.0,
            forgetting_seconds: 0.0,
            steps_used,
            pre_return: None,
            post_return: None,
            critic_gap_start: None,
            critic_gap_end: None,
            trace: Vec::with_capacity(steps_used),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            w.write_all(b"\n")
        })
    }

    /// `step,phase,actor_loss,critic_loss,critic_gap`; missing values are empty.
    pub fn save_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        write_atomic(path.as_ref(), |w| {
            writeln!(w, "step,phase,actor_loss,critic_loss,critic_gap")?;
            for r in &self.trace {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.step,
                    r.phase.name(),
                    fmt(r.actor_loss),
                    fmt(r.critic_loss),
                    r.critic_gap.map(fmt).unwrap_or_default()
                )?;
            }
            Ok(())
        })
    }
}
