//! Exact Bayesian inference by enumerating every support pattern.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::kalman::{
    chain_log_evidence, chain_smoothed_means, chain_smoother, EvidenceWorkspace, FrameData,
};
use crate::model::{MmvProblem, ModelParams};
use crate::sks::active_columns;

pub const DEFAULT_ENUM_CAP: usize = 18;

/// Supports whose log weight trails the best by more than this contribute
/// below double precision and skip the smoothing pass.
const NEGLIGIBLE_LOG_WEIGHT: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EnumResult<T: Scalar> {
    /// `N x T` posterior means of `x`.
    pub x_mmse: DMatrix<T>,
    /// `p(s_n = 1 | y)`.
    pub support_post: Vec<f64>,
    /// `log p(y | s)` for each pattern; bit `n` of the index is `s_n`.
    pub log_evidence: Vec<f64>,
    /// Normalized `log p(s | y)`; `-inf` for patterns with zero prior mass.
    pub log_posterior: Vec<f64>,
}

fn log_prior<T: Scalar>(params: &ModelParams<T>, n: usize, pattern: usize) -> f64 {
    (0..n)
        .map(|i| {
            let l = params.lambda_at(i);
            if pattern >> i & 1 == 1 {
                l.ln()
            } else {
                (1.0 - l).ln()
            }
        })
        .sum()
}

fn pattern_indices(n: usize, pattern: usize) -> Vec<usize> {
    (0..n).filter(|&i| pattern >> i & 1 == 1).collect()
}

pub fn enumerate_mmse<T: Scalar>(
    problem: &MmvProblem<T>,
    params: &ModelParams<T>,
    max_n: usize,
) -> Result<EnumResult<T>> {
    let (n, _, frames) = problem.dims();
    if n > max_n {
        return Err(Error::EnumerationTooLarge { n, cap: max_n });
    }
    params.validate(Some(n))?;
    if params.alpha <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    let all: Vec<usize> = (0..n).collect();
    let full: Vec<FrameData<T>> = (0..frames)
        .map(|t| FrameData::from_columns(&active_columns(problem.operator(t), &all), problem.observation(t)))
        .collect();
    let restrict = |pattern: usize| -> Vec<FrameData<T>> {
        let idx = pattern_indices(n, pattern);
        full.iter().map(|f| f.restrict(&idx)).collect()
    };

    let count = 1usize << n;
    let log_evidence: Vec<f64> = (0..count)
        .into_par_iter()
        .map_init(EvidenceWorkspace::default, |ws, p| {
            chain_log_evidence(&full, &pattern_indices(n, p), params, ws)
                .unwrap_or_else(|| chain_smoother(&restrict(p), params, false).log_evidence)
        })
        .collect();
    let log_joint: Vec<f64> = (0..count)
        .map(|p| log_prior(params, n, p) + log_evidence[p])
        .collect();
    let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut terms: Vec<f64> = log_joint.iter().map(|&l| (l - max).exp()).collect();
    terms.sort_by(|a, b| a.partial_cmp(b).expect("weights are not NaN"));
    let log_norm = max + terms.iter().sum::<f64>().ln();
    let log_posterior: Vec<f64> = log_joint.iter().map(|&l| l - log_norm).collect();

    let kept: Vec<usize> = (0..count)
        .filter(|&p| log_joint[p] >= max - NEGLIGIBLE_LOG_WEIGHT)
        .collect();
    // frame-major means (T x k) per kept pattern
    let means: Vec<(usize, Vec<T>)> = kept
        .par_iter()
        .map_init(EvidenceWorkspace::default, |ws, &p| {
            let idx = pattern_indices(n, p);
            let mut out = Vec::new();
            if chain_smoothed_means(&full, &idx, params, ws, &mut out).is_none() {
                let res = chain_smoother(&restrict(p), params, true);
                out = res.means.iter().flat_map(|m| m.iter().copied()).collect();
            }
            (p, out)
        })
        .collect();

    let mut x_mmse = DMatrix::<T>::zeros(n, frames);
    for (p, m) in &means {
        let w = log_posterior[*p].exp();
        let idx = pattern_indices(n, *p);
        let k = idx.len();
        for (j, &i) in idx.iter().enumerate() {
            for t in 0..frames {
                x_mmse[(i, t)] += m[t * k + j].scaled(w);
            }
        }
    }
    let mut support_post = vec![0.0; n];
    for (p, &lp) in log_posterior.iter().enumerate() {
        let w = lp.exp();
        if w == 0.0 {
            continue;
        }
        for (i, s) in support_post.iter_mut().enumerate() {
            if p >> i & 1 == 1 {
                *s += w;
            }
        }
    }
    for s in &mut support_post {
        *s = s.clamp(0.0, 1.0);
    }
    Ok(EnumResult {
        x_mmse,
        support_post,
        log_evidence,
        log_posterior,
    })
}
