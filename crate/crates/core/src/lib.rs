pub mod approx;
pub mod auditor;
pub mod data;
pub mod envs;
pub mod error;
pub mod harness;
pub mod deleter;
pub mod offline_rl;

pub use error::{Error, Result};
