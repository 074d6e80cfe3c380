//! Support-aware Kalman smoother: the MMSE estimator given the true support
//! and parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::kalman::{chain_smoother, FrameData};
use crate::model::{MmvProblem, ModelParams};
use crate::operator::LinearOperator;

#[derive(Debug, Clone, Copy)]
pub struct SksInput<'a, T: Scalar> {
    pub problem: &'a MmvProblem<T>,
    pub support: &'a [bool],
    pub params: &'a ModelParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SksOutput<T: Scalar> {
    /// `N x T` smoothed amplitude means; prior mean off the support.
    pub theta_hat: DMatrix<T>,
    pub theta_cov_diag: DMatrix<f64>,
    /// Filtered variances (before the backward pass).
    pub theta_filtered_var: DMatrix<f64>,
    /// `x^(t) = D(s) theta^(t)`; exactly zero off the support.
    pub x_hat: DMatrix<T>,
    pub log_evidence: f64,
    /// A jitter was needed (e.g. `sigma_e^2 = 0` with rank-deficient `A_S`).
    pub regularized: bool,
}

/// Columns `idx` of an operator as a dense `M x |idx|` matrix.
pub fn active_columns<T: Scalar>(op: &dyn LinearOperator<T>, idx: &[usize]) -> DMatrix<T> {
    if let Some(a) = op.as_dense() {
        return a.select_columns(idx);
    }
    let mut out = DMatrix::<T>::zeros(op.nrows(), idx.len());
    let mut e = DVector::<T>::zeros(op.ncols());
    let mut col = DVector::<T>::zeros(op.nrows());
    for (j, &i) in idx.iter().enumerate() {
        e[i] = T::one();
        op.apply(&e, &mut col);
        out.set_column(j, &col);
        e[i] = T::zero();
    }
    out
}

pub fn sks_smooth<T: Scalar>(input: &SksInput<'_, T>) -> Result<SksOutput<T>> {
    let SksInput {
        problem,
        support,
        params,
    } = *input;
    let (n, _, frames) = problem.dims();
    if support.len() != n {
        return Err(Error::Dimension(format!(
            "support has length {}, expected {n}",
            support.len()
        )));
    }
    params.validate(Some(n))?;
    if params.alpha <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    let idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();

    let mut shared: Option<DMatrix<T>> = None;
    let data: Vec<FrameData<T>> = (0..frames)
        .map(|t| {
            let y = problem.observation(t);
            if problem.is_shared_matrix() {
                let a = shared.get_or_insert_with(|| active_columns(problem.operator(0), &idx));
                FrameData::from_columns(a, y)
            } else {
                FrameData::from_columns(&active_columns(problem.operator(t), &idx), y)
            }
        })
        .collect();
    let res = chain_smoother(&data, params, true);

    let sigma2 = params.sigma2();
    let mut theta_hat = DMatrix::from_element(n, frames, params.zeta);
    let mut theta_cov_diag = DMatrix::from_element(n, frames, sigma2);
    let mut theta_filtered_var = theta_cov_diag.clone();
    let mut x_hat = DMatrix::<T>::zeros(n, frames);
    for t in 0..frames {
        for (j, &i) in idx.iter().enumerate() {
            theta_hat[(i, t)] = res.means[t][j];
            theta_cov_diag[(i, t)] = res.vars[t][j];
            theta_filtered_var[(i, t)] = res.filtered_vars[t][j];
            x_hat[(i, t)] = res.means[t][j];
        }
    }
    Ok(SksOutput {
        theta_hat,
        theta_cov_diag,
        theta_filtered_var,
        x_hat,
        log_evidence: res.log_evidence,
        regularized: res.regularized,
    })
}
