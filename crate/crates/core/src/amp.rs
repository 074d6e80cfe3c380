//! Per-frame AMP with Bernoulli-Gaussian local priors.
//!
//! The local prior on `x_n` is `(1 - pi) delta(x) + pi N(x; xi, psi)`; the
//! pseudo-measurement seen by the denoiser is `phi = x + N(0, c)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::operator::LinearOperator;

/// `log gamma` above this is treated as `gamma = +inf`.
pub const LOG_GAMMA_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LocalPrior<T: Scalar> {
    pub pi: f64,
    pub xi: T,
    pub psi: f64,
}

impl<T: Scalar> LocalPrior<T> {
    pub fn new(pi: f64, xi: T, psi: f64) -> Self {
        Self { pi, xi, psi }
    }
}

/// `ln gamma(phi; c)` for `0 < pi < 1`: the log likelihood ratio of the
/// inactive versus active hypotheses, plus the prior log odds.
#[inline]
fn log_gamma<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> f64 {
    let h = T::GAUSS_SCALE;
    let psi = prior.psi;
    let cross = 2.0 * c * (prior.xi.conj() * phi).re();
    let bracket = psi * phi.abs2() + cross - c * prior.xi.abs2();
    ((1.0 - prior.pi) / prior.pi).ln() + h * ((psi + c) / c).ln() - h * bracket / (c * (psi + c))
}

/// `gamma_nt(phi; c)`; `+inf` when `pi = 0` or the exponent exceeds the clamp.
pub fn gamma<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> f64 {
    if prior.pi <= 0.0 {
        return f64::INFINITY;
    }
    if prior.pi >= 1.0 {
        return 0.0;
    }
    let lg = log_gamma(phi, c, prior);
    if lg > LOG_GAMMA_CLAMP {
        f64::INFINITY
    } else {
        lg.max(-LOG_GAMMA_CLAMP).exp()
    }
}

/// Posterior activity weight `1 / (1 + gamma)` and its complement, computed
/// without forming `gamma`. Returns `None` when the coefficient is forced
/// inactive.
#[inline]
fn activity<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> Option<(f64, f64)> {
    if prior.pi <= 0.0 {
        return None;
    }
    if prior.pi >= 1.0 {
        return Some((1.0, 0.0));
    }
    let lg = log_gamma(phi, c, prior);
    if lg > LOG_GAMMA_CLAMP {
        return None;
    }
    // w = 1/(1+e^lg), 1-w = e^lg/(1+e^lg)
    let (w, wc) = if lg > 0.0 {
        let e = (-lg).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = lg.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    };
    Some((w, wc))
}

/// Posterior mean and variance `(F, G)` of `x` given `phi`.
#[inline]
pub fn denoise<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> (T, f64) {
    match activity(phi, c, prior) {
        None => (T::zero(), 0.0),
        Some((w, wc)) => {
            let psi = prior.psi;
            let mean = (phi.scaled(psi) + prior.xi.scaled(c)).scaled(1.0 / (psi + c));
            let var = psi * c / (psi + c);
            (mean.scaled(w), w * var + w * wc * mean.abs2())
        }
    }
}

/// `F_nt(phi; c)`: posterior mean of `x` under the local prior.
pub fn f_threshold<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> T {
    denoise(phi, c, prior).0
}

/// `G_nt(phi; c)`: posterior variance of `x` under the local prior.
pub fn g_threshold<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> f64 {
    denoise(phi, c, prior).1
}

/// `F'_nt(phi; c) = G_nt(phi; c) / c`.
pub fn f_prime<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> f64 {
    g_threshold(phi, c, prior) / c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub max_iters: usize,
    /// Early exit once `||mu_new - mu||^2 <= tol * ||mu||^2`.
    pub tol: f64,
    /// Weight on the new iterate for `mu` and `c` (1 = undamped).
    pub damping: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            tol: 1e-8,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState<T: Scalar> {
    /// Residual, length M.
    pub z: DVector<T>,
    /// Posterior means, length N.
    pub mu: DVector<T>,
    /// Posterior variances, length N.
    pub v: DVector<f64>,
    /// Message variance for the next iteration.
    pub c: f64,
    /// Pseudo-data of the last iteration.
    pub phi: DVector<T>,
    /// Variance `c` that `phi` was denoised with.
    pub phi_var: f64,
    /// Iterations executed by the call that produced this state.
    pub iter: usize,
}

impl<T: Scalar> AmpState<T> {
    /// Cold start: `z = y`, `mu = 0`, `c = 100 sum_n psi_n`.
    pub fn cold(y: &DVector<T>, priors: &[LocalPrior<T>]) -> Self {
        let n = priors.len();
        let c = 100.0 * priors.iter().map(|p| p.psi).sum::<f64>();
        Self {
            z: y.clone(),
            mu: DVector::zeros(n),
            v: DVector::zeros(n),
            c,
            phi: DVector::zeros(n),
            phi_var: c,
            iter: 0,
        }
    }
}

/// Workspace reused across AMP calls of the same shape.
#[derive(Debug, Clone)]
pub struct AmpScratch<T: Scalar> {
    ahz: DVector<T>,
    amu: DVector<T>,
}

impl<T: Scalar> AmpScratch<T> {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            ahz: DVector::zeros(n),
            amu: DVector::zeros(m),
        }
    }
}

/// Runs the AMP recursion on one frame.
pub fn run_amp<T: Scalar>(
    y: &DVector<T>,
    op: &dyn LinearOperator<T>,
    priors: &[LocalPrior<T>],
    sigma_e2: f64,
    cfg: &AmpConfig,
    init: Option<AmpState<T>>,
) -> Result<AmpState<T>> {
    let mut scratch = AmpScratch::new(op.nrows(), op.ncols());
    run_amp_with(y, op, priors, sigma_e2, cfg, init, &mut scratch)
}

pub fn run_amp_with<T: Scalar>(
    y: &DVector<T>,
    op: &dyn LinearOperator<T>,
    priors: &[LocalPrior<T>],
    sigma_e2: f64,
    cfg: &AmpConfig,
    init: Option<AmpState<T>>,
    scratch: &mut AmpScratch<T>,
) -> Result<AmpState<T>> {
    let (m, n) = (op.nrows(), op.ncols());
    if y.len() != m || priors.len() != n {
        return Err(Error::Dimension(format!(
            "AMP: operator {m}x{n}, y has length {}, {} priors",
            y.len(),
            priors.len()
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Parameter("AMP needs at least one iteration".into()));
    }
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::Parameter(format!("damping {} outside (0, 1]", cfg.damping)));
    }
    let mut st = match init {
        Some(s) if s.z.len() == m && s.mu.len() == n => s,
        Some(_) => return Err(Error::Dimension("AMP warm start has wrong shape".into())),
        None => AmpState::cold(y, priors),
    };
    let inv_m = 1.0 / m as f64;
    let d = cfg.damping;
    let mut mu_new = DVector::<T>::zeros(n);

    for i in 1..=cfg.max_iters {
        let c = st.c.max(f64::MIN_POSITIVE);
        op.apply_adjoint(&st.z, &mut scratch.ahz);
        let mut v_sum = 0.0;
        for k in 0..n {
            let phi = scratch.ahz[k] + st.mu[k];
            st.phi[k] = phi;
            let (f, g) = denoise(phi, c, &priors[k]);
            mu_new[k] = f;
            st.v[k] = g;
            v_sum += g;
        }
        st.phi_var = c;
        let onsager = v_sum / c * inv_m;
        let c_new = sigma_e2 + v_sum * inv_m;

        let mut diff = 0.0;
        let mut prev = 0.0;
        for k in 0..n {
            let next = if d < 1.0 {
                mu_new[k].scaled(d) + st.mu[k].scaled(1.0 - d)
            } else {
                mu_new[k]
            };
            diff += (next - st.mu[k]).abs2();
            prev += st.mu[k].abs2();
            st.mu[k] = next;
        }
        st.c = d * c_new + (1.0 - d) * st.c;

        op.apply(&st.mu, &mut scratch.amu);
        for r in 0..m {
            st.z[r] = y[r] - scratch.amu[r] + st.z[r].scaled(onsager);
        }
        st.iter = i;

        if !(st.c.is_finite() && diff.is_finite())
            || !st.z.iter().all(|v| v.is_finite_scalar())
        {
            return Err(Error::AmpDiverged { iteration: i });
        }
        if diff <= cfg.tol * prev {
            break;
        }
    }
    Ok(st)
}
