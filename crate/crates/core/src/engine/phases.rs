//! The (into), (out) and (across) message updates and the posterior
//! summaries built from a message state.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::messages::{taylor_approx, GaussianMsg};
use super::state::MessageState;
use crate::amp::{AmpState, LocalPrior};
use crate::field::Scalar;
use crate::model::ModelParams;

/// Per-factor floor applied before taking logs of activity messages.
pub const ACTIVITY_FLOOR: f64 = 1e-300;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_odds_factor(p: f64) -> f64 {
    p.max(ACTIVITY_FLOOR).ln() - (1.0 - p).max(ACTIVITY_FLOOR).ln()
}

/// `lambda prod pi / (lambda prod pi + (1 - lambda) prod (1 - pi))` in the
/// log domain, over the messages yielded by `msgs`.
pub fn combine_activity(lambda: f64, msgs: impl Iterator<Item = f64>) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= 1.0 {
        return 1.0;
    }
    let evidence: f64 = msgs.map(log_odds_factor).sum();
    if evidence == 0.0 {
        return lambda;
    }
    sigmoid(lambda.ln() - (1.0 - lambda).ln() + evidence)
}

/// (into) phase for frame `t`: activity priors from the other frames and the
/// amplitude prior from the two across messages. Updates `pi_bwd` and
/// `theta_into` at `t` and returns the local priors for AMP.
pub fn into_phase<T: Scalar>(
    state: &mut MessageState<T>,
    params: &ModelParams<T>,
    t: usize,
) -> Vec<LocalPrior<T>> {
    let n = state.n();
    let frames = state.frames();
    let sigma2 = params.sigma2();
    let mut priors = Vec::with_capacity(n);
    for i in 0..n {
        let others = (0..frames)
            .filter(|&s| s != t)
            .map(|s| *state.pi_fwd.get(i, s));
        let pi_bar = combine_activity(params.lambda_at(i), others);
        state.pi_bwd.set(i, t, pi_bar);

        let bwd = *state.across_bwd.get(i, t);
        let msg = state.across_fwd.get(i, t).fuse(bwd);
        state.theta_into.set(i, t, msg);
        // the prior boundary alone is used with its exact moments
        let prior_only = t == 0 && !bwd.is_informative();
        let (xi, psi) = match msg.mean() {
            Some(m) if !prior_only => (m, msg.var()),
            _ => (params.zeta, sigma2),
        };
        priors.push(LocalPrior::new(pi_bar, xi, psi));
    }
    priors
}

/// `pi -> = Pr{s = 1 | phi}` under equal prior odds: the likelihood of the
/// pseudo-measurement under the active hypothesis, normalized against the
/// inactive one. This equals `(1 + (pi/(1-pi)) gamma)^{-1}` and does not
/// depend on `prior.pi`.
pub fn activity_message<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> f64 {
    let l1 = T::log_normal_pdf(phi, prior.xi, prior.psi + c);
    let l0 = T::log_normal_pdf(phi, T::zero(), c);
    sigmoid(l1 - l0)
}

/// Taylor collapse with a fallback for locally concave mixtures: when the
/// curvature at `phi` is not positive the informative component `(phi, c)`
/// is emitted.
pub fn collapse_out_message<T: Scalar>(pi_bwd: f64, phi: T, c: f64, epsilon: f64) -> GaussianMsg<T> {
    let tm = taylor_approx(pi_bwd, phi, c, epsilon);
    if tm.psi > 0.0 && tm.psi.is_finite() && tm.xi.is_finite_scalar() {
        GaussianMsg::from_mean_var(tm.xi, tm.psi)
    } else {
        GaussianMsg::from_mean_var(phi, c)
    }
}

/// (out) phase: activity and amplitude messages leaving a frame, evaluated
/// at the pseudo-data and variance of the last AMP iteration.
pub fn out_phase<T: Scalar>(
    amp: &AmpState<T>,
    priors: &[LocalPrior<T>],
    epsilon: f64,
) -> (Vec<f64>, Vec<GaussianMsg<T>>) {
    let c = amp.phi_var;
    priors
        .iter()
        .zip(amp.phi.iter())
        .map(|(p, &phi)| {
            (
                activity_message(phi, c, p),
                collapse_out_message(p.pi, phi, c, epsilon),
            )
        })
        .unzip()
}

/// Forward transition of one message through the Gauss-Markov factor.
pub fn propagate_forward<T: Scalar>(
    incoming: GaussianMsg<T>,
    out: GaussianMsg<T>,
    params: &ModelParams<T>,
) -> GaussianMsg<T> {
    let a = params.alpha;
    let q = params.transition_variance();
    if a >= 1.0 {
        return GaussianMsg::from_mean_var(params.zeta, params.rho);
    }
    let fused = incoming.fuse(out);
    match fused.mean() {
        None => GaussianMsg::uninformative(),
        Some(m) => {
            let mean = m.scaled(1.0 - a) + params.zeta.scaled(a);
            let var = (1.0 - a) * (1.0 - a) * fused.var() + q;
            GaussianMsg::from_mean_var(mean, var)
        }
    }
}

/// Backward transition: inverts the dynamics for the message heading to the
/// previous frame.
pub fn propagate_backward<T: Scalar>(
    incoming: GaussianMsg<T>,
    out: GaussianMsg<T>,
    params: &ModelParams<T>,
) -> GaussianMsg<T> {
    let a = params.alpha;
    if a >= 1.0 {
        return GaussianMsg::uninformative();
    }
    let fused = incoming.fuse(out);
    match fused.mean() {
        None => GaussianMsg::uninformative(),
        Some(m) => {
            let g = 1.0 / (1.0 - a);
            let mean = (m - params.zeta.scaled(a)).scaled(g);
            let var = (fused.var() + params.transition_variance()) * g * g;
            GaussianMsg::from_mean_var(mean, var)
        }
    }
}

/// (across) phase from frame `t` to `t + 1`.
pub fn across_forward<T: Scalar>(state: &mut MessageState<T>, params: &ModelParams<T>, t: usize) {
    for i in 0..state.n() {
        let m = propagate_forward(*state.across_fwd.get(i, t), *state.theta_out.get(i, t), params);
        state.across_fwd.set(i, t + 1, m);
    }
}

/// (across) phase from frame `t` to `t - 1`.
pub fn across_backward<T: Scalar>(state: &mut MessageState<T>, params: &ModelParams<T>, t: usize) {
    for i in 0..state.n() {
        let m = propagate_backward(*state.across_bwd.get(i, t), *state.theta_out.get(i, t), params);
        state.across_bwd.set(i, t - 1, m);
    }
}

/// Posterior activity probabilities from all frames' activity messages.
pub fn posterior_support<T: Scalar>(state: &MessageState<T>, params: &ModelParams<T>) -> Vec<f64> {
    (0..state.n())
        .map(|i| combine_activity(params.lambda_at(i), state.pi_fwd.iter_row(i)))
        .collect()
}

/// Marginal amplitude posterior at `(i, t)` as a message.
pub fn theta_marginal<T: Scalar>(state: &MessageState<T>, i: usize, t: usize) -> GaussianMsg<T> {
    state
        .across_fwd
        .get(i, t)
        .fuse(*state.theta_out.get(i, t))
        .fuse(*state.across_bwd.get(i, t))
}

/// `E[conj(theta^(t)) theta^(t-1) | y]` from the pairwise Gaussian joint at
/// the transition factor between frames `t - 1` and `t`.
pub fn lag_one_moment<T: Scalar>(
    state: &MessageState<T>,
    params: &ModelParams<T>,
    i: usize,
    t: usize,
) -> T {
    let a = params.alpha;
    let q = params.transition_variance();
    let ma = state.across_fwd.get(i, t - 1).fuse(*state.theta_out.get(i, t - 1));
    let mb = state.across_bwd.get(i, t).fuse(*state.theta_out.get(i, t));
    let marginal_b = theta_marginal(state, i, t);
    if q <= 0.0 {
        // theta^(t) = theta^(t-1) almost surely
        return match marginal_b.mean() {
            Some(m) => T::from_real(m.abs2() + marginal_b.var()),
            None => T::zero(),
        };
    }
    let (pa, pb) = (ma.precision, mb.precision);
    let g = 1.0 - a;
    let j00 = pa + g * g / q;
    let j11 = pb + 1.0 / q;
    let j01 = -g / q;
    let det = pa * pb + pa / q + pb * g * g / q;
    let ha = ma.weighted_mean - params.zeta.scaled(g * a / q);
    let hb = mb.weighted_mean + params.zeta.scaled(a / q);
    if !(det > 0.0) || !det.is_finite() {
        let ta = theta_marginal(state, i, t - 1).mean().unwrap_or(params.zeta);
        let tb = marginal_b.mean().unwrap_or(params.zeta);
        return tb.conj() * ta;
    }
    let mean_a = (ha.scaled(j11) - hb.scaled(j01)).scaled(1.0 / det);
    let mean_b = (hb.scaled(j00) - ha.scaled(j01)).scaled(1.0 / det);
    let cov_ab = -j01 / det;
    mean_b.conj() * mean_a + T::from_real(cov_ab)
}

/// Posterior quantities consumed by EM and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PosteriorSummary<T: Scalar> {
    /// `N x T` posterior means of `x`.
    pub x_mean: DMatrix<T>,
    pub x_var: DMatrix<f64>,
    pub s_post: Vec<f64>,
    pub theta_mean: DMatrix<T>,
    pub theta_var: DMatrix<f64>,
    /// `N x (T - 1)`; column `t - 1` holds `E[conj(theta^(t)) theta^(t-1)]`.
    pub theta_lag1: DMatrix<T>,
}

impl<T: Scalar> PosteriorSummary<T> {
    pub fn n(&self) -> usize {
        self.x_mean.nrows()
    }

    pub fn frames(&self) -> usize {
        self.x_mean.ncols()
    }
}

/// Builds the posterior summary from a message state whose frames all carry
/// an AMP state.
pub fn summarize<T: Scalar>(state: &MessageState<T>, params: &ModelParams<T>) -> PosteriorSummary<T> {
    let (n, frames) = (state.n(), state.frames());
    let mut x_mean = DMatrix::<T>::zeros(n, frames);
    let mut x_var = DMatrix::<f64>::zeros(n, frames);
    let mut theta_mean = DMatrix::<T>::zeros(n, frames);
    let mut theta_var = DMatrix::<f64>::zeros(n, frames);
    let mut theta_lag1 = DMatrix::<T>::zeros(n, frames.saturating_sub(1));
    let sigma2 = params.sigma2();
    for t in 0..frames {
        if let Some(amp) = &state.amp[t] {
            x_mean.set_column(t, &amp.mu);
            x_var.set_column(t, &amp.v);
        }
        for i in 0..n {
            let m = theta_marginal(state, i, t);
            let (mu, v) = match m.mean() {
                Some(mu) => (mu, m.var()),
                None => (params.zeta, sigma2),
            };
            theta_mean[(i, t)] = mu;
            theta_var[(i, t)] = v;
            if t > 0 {
                theta_lag1[(i, t - 1)] = lag_one_moment(state, params, i, t);
            }
        }
    }
    PosteriorSummary {
        x_mean,
        x_var,
        s_post: posterior_support(state, params),
        theta_mean,
        theta_var,
        theta_lag1,
    }
}
