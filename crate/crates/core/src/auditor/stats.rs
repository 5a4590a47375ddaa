use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// W1 distance between the empirical distributions of two equal-length vectors.
pub fn wasserstein1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("wasserstein1d: lengths {} and {}", u.len(), v.len())));
    }
    if u.is_empty() {
        return Err(Error::InvalidArgument("wasserstein1d: empty vectors".into()));
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn t_cdf(t: f64, df: u64) -> f64 {
    let nu = df as f64;
    let tail = 0.5 * beta_reg(nu / 2.0, 0.5, nu / (nu + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student-t quantile by bisection on [`t_cdf`], to 1e-8 absolute.
pub fn t_inv_cdf(p: f64, df: u64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "t_inv_cdf needs 0 < p < 1, got {p}");
    assert!(df >= 1, "t_inv_cdf needs df >= 1");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_inv_cdf(1.0 - p, df);
    }
    let mut hi = 1.0;
    while t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrubbsResult {
    pub is_outlier: bool,
    pub statistic: f64,
    pub critical: f64,
}

/// Critical value of the one-sided Grubbs test for `n` pooled samples.
pub fn grubbs_critical(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    let t = t_inv_cdf(1.0 - alpha / nf, (n - 2) as u64);
    (nf - 1.0) / nf.sqrt() * (t * t / (nf - 2.0 + t * t)).sqrt()
}

/// One-sided (high) Grubbs test of `target` against `reference`.
///
/// A reference cloud with zero spread flags any target that differs from it.
pub fn grubbs_outlier(reference: &[f64], target: f64, alpha: f64) -> Result<GrubbsResult> {
    if reference.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "grubbs needs at least 2 reference values, got {}",
            reference.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("grubbs alpha must be in (0,1), got {alpha}")));
    }
    if !target.is_finite() || reference.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grubbs input".into()));
    }
    let n = reference.len() + 1;
    let mean = (reference.iter().sum::<f64>() + target) / n as f64;
    let ss = reference.iter().map(|v| (v - mean).powi(2)).sum::<f64>() + (target - mean).powi(2);
    let sd = (ss / (n - 1) as f64).sqrt();
    let critical = grubbs_critical(n, alpha);
    let statistic = if sd > 0.0 { (target - mean) / sd } else { 0.0 };
    let flat = reference.iter().all(|&v| v == reference[0]);
    let is_outlier = if flat { target != reference[0] } else { statistic > critical };
    Ok(GrubbsResult {
        is_outlier,
        statistic,
        critical,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when there were no positive predictions (precision reported as 0).
    pub precision_defined: bool,
    /// False when there were no actual positives (recall reported as 0).
    pub recall_defined: bool,
}

/// Precision/recall/F1 with `true` predictions as positives.
pub fn precision_recall_f1(predicted: &[bool], truth: &[bool]) -> Result<PrfScores> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let count = |p: bool, t: bool| predicted.iter().zip(truth).filter(|&(&a, &b)| a == p && b == t).count() as f64;
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let precision_defined = tp + fp > 0.0;
    let recall_defined = tp + fn_ > 0.0;
    let precision = if precision_defined { tp / (tp + fp) } else { 0.0 };
    let recall = if recall_defined { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PrfScores {
        precision,
        recall,
        f1,
        precision_defined,
        recall_defined,
    })
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
