//! Recovery metrics and support estimation rules.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::PosteriorSummary;
use crate::error::{Error, Result};
use crate::field::Scalar;

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Time-averaged normalized squared error together with the frames that
/// were excluded because the true signal is zero there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tnmse {
    pub value: f64,
    pub excluded_frames: Vec<usize>,
}

impl Tnmse {
    pub fn db(&self) -> f64 {
        to_db(self.value)
    }
}

pub fn tnmse_detailed<T: Scalar>(x_true: &DMatrix<T>, x_hat: &DMatrix<T>) -> Result<Tnmse> {
    if x_true.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "TNMSE of {:?} against {:?}",
            x_true.shape(),
            x_hat.shape()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded_frames = Vec::new();
    for t in 0..x_true.ncols() {
        let xt = x_true.column(t);
        let energy: f64 = xt.iter().map(|v| v.abs2()).sum();
        if energy == 0.0 {
            excluded_frames.push(t);
            continue;
        }
        let err: f64 = xt.iter().zip(x_hat.column(t).iter()).map(|(a, b)| (*a - *b).abs2()).sum();
        sum += err / energy;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("TNMSE with every true frame zero".into()));
    }
    Ok(Tnmse {
        value: sum / used as f64,
        excluded_frames,
    })
}

pub fn tnmse<T: Scalar>(x_true: &DMatrix<T>, x_hat: &DMatrix<T>) -> Result<f64> {
    tnmse_detailed(x_true, x_hat).map(|t| t.value)
}

/// `|S_true xor S_hat| / |S_true|` for index sets.
pub fn nser(s_true: &[usize], s_hat: &[usize]) -> Result<f64> {
    if s_true.is_empty() {
        return Err(Error::UndefinedMetric("NSER with an empty true support".into()));
    }
    let a: std::collections::BTreeSet<usize> = s_true.iter().copied().collect();
    let b: std::collections::BTreeSet<usize> = s_hat.iter().copied().collect();
    Ok(a.symmetric_difference(&b).count() as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportRule {
    /// The `K` trajectories with the largest energy.
    KLargest,
    /// Indices whose posterior activity exceeds 1/2.
    #[default]
    PosteriorThreshold,
}

/// Indices of the `k` rows of `x` with the largest energy, ties to the lower
/// index; returned in increasing order.
pub fn k_largest_rows<T: Scalar>(x: &DMatrix<T>, k: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if k > n {
        return Err(Error::Parameter(format!("K = {k} exceeds N = {n}")));
    }
    let energy: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v.abs2()).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    let mut out = order[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

pub fn threshold_support(s_post: &[f64]) -> Vec<usize> {
    (0..s_post.len()).filter(|&i| s_post[i] > 0.5).collect()
}

pub fn estimate_support<T: Scalar>(
    summary: &PosteriorSummary<T>,
    rule: SupportRule,
    k: Option<usize>,
) -> Result<Vec<usize>> {
    match rule {
        SupportRule::KLargest => {
            let k = k.ok_or_else(|| Error::Parameter("k-largest rule needs K".into()))?;
            k_largest_rows(&summary.x_mean, k)
        }
        SupportRule::PosteriorThreshold => Ok(threshold_support(&summary.s_post)),
    }
}

/// Metrics of one algorithm on one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tnmse: f64,
    pub nser: f64,
    pub runtime_s: f64,
}

impl Metrics {
    pub fn tnmse_db(&self) -> f64 {
        to_db(self.tnmse)
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
