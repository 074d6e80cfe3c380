//! Reference computations used to validate the fast paths: dense joint
//! Gaussian conditioning, direct spike-and-slab moments, finite-difference
//! checks of the Taylor collapse and 1-d maximization of the EM objectives.

use nalgebra::{DMatrix, DVector};

use crate::amp::LocalPrior;
use crate::engine::{field_omega, mixture_eps_weight, PosteriorSummary};
use crate::field::Scalar;
use crate::model::{MmvProblem, ModelParams};
use crate::sks::active_columns;

/// Golden-section search for the maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Posterior of the active amplitudes by dense conditioning of the full
/// `K T`-dimensional Gaussian.
#[derive(Debug, Clone)]
pub struct DenseChainPosterior<T: Scalar> {
    /// `K x T` means (rows follow the active indices in increasing order).
    pub means: DMatrix<T>,
    pub vars: DMatrix<f64>,
    pub log_evidence: f64,
}

pub fn dense_chain_posterior<T: Scalar>(
    problem: &MmvProblem<T>,
    support: &[bool],
    params: &ModelParams<T>,
) -> DenseChainPosterior<T> {
    let (n, m, frames) = problem.dims();
    let idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();
    let k = idx.len();
    let dim = k * frames;
    let sigma2 = params.sigma2();
    let g = 1.0 - params.alpha;
    // stationary chain: Cov(theta_s, theta_u) = sigma^2 (1 - alpha)^|s - u|
    let mut cov = DMatrix::<T>::zeros(dim, dim);
    for s in 0..frames {
        for u in 0..frames {
            let c = sigma2 * g.powi((s as i32 - u as i32).abs());
            for j in 0..k {
                cov[(s * k + j, u * k + j)] = T::from_real(c);
            }
        }
    }
    let mean = DVector::from_element(dim, params.zeta);
    let mut h = DMatrix::<T>::zeros(m * frames, dim);
    let mut y = DVector::<T>::zeros(m * frames);
    for t in 0..frames {
        let a = active_columns(problem.operator(t), &idx);
        h.view_mut((t * m, t * k), (m, k)).copy_from(&a);
        y.rows_mut(t * m, m).copy_from(problem.observation(t));
    }
    let hc = &h * &cov;
    let mut s = &hc * h.adjoint();
    for i in 0..m * frames {
        s[(i, i)] += T::from_real(params.sigma_e2);
    }
    let chol = s.clone().cholesky().expect("innovation covariance is positive definite");
    let resid = &y - &h * &mean;
    let sol = chol.solve(&resid);
    let post_mean = &mean + hc.adjoint() * &sol;
    let gain = chol.solve(&hc);
    let post_cov = &cov - hc.adjoint() * gain;

    let hh = T::GAUSS_SCALE;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.re().ln()).sum::<f64>();
    let quad = resid.dotc(&sol).re();
    let log_evidence = -hh * (quad + logdet + (m * frames) as f64 * (std::f64::consts::PI / hh).ln());

    DenseChainPosterior {
        means: DMatrix::from_fn(k, frames, |j, t| post_mean[t * k + j]),
        vars: DMatrix::from_fn(k, frames, |j, t| post_cov[(t * k + j, t * k + j)].re()),
        log_evidence,
    }
}

/// Posterior mean and variance of `x` under the spike-and-slab prior given
/// `phi = x + N(0, c)`, from the two hypothesis evidences.
pub fn spike_slab_moments<T: Scalar>(phi: T, c: f64, prior: &LocalPrior<T>) -> (T, f64) {
    let l0 = (1.0 - prior.pi).ln() + T::log_normal_pdf(phi, T::zero(), c);
    let l1 = prior.pi.ln() + T::log_normal_pdf(phi, prior.xi, prior.psi + c);
    let mx = l0.max(l1);
    let w1 = (l1 - mx).exp() / ((l0 - mx).exp() + (l1 - mx).exp());
    let prec = 1.0 / prior.psi + 1.0 / c;
    let v = 1.0 / prec;
    let m = (prior.xi.scaled(1.0 / prior.psi) + phi.scaled(1.0 / c)).scaled(v);
    let mean = m.scaled(w1);
    let second = w1 * (v + m.abs2());
    (mean, second - mean.abs2())
}

/// `-log` of the two-component mixture collapsed by the Taylor step,
/// evaluated at `theta`.
pub fn mixture_neg_log_density<T: Scalar>(theta: T, pi_bwd: f64, phi: T, c: f64, epsilon: f64) -> f64 {
    let h = T::GAUSS_SCALE;
    let om = field_omega::<T>(pi_bwd, epsilon);
    // broad: N(theta; phi/eps, c/eps^2); narrow: N(theta; phi, c)
    let broad = (1.0 - om).ln() + mixture_eps_weight::<T>(epsilon).ln()
        - h * (theta.scaled(epsilon) - phi).abs2() / c;
    let narrow = om.ln() - h * (theta - phi).abs2() / c;
    let mx = broad.max(narrow);
    -(mx + ((broad - mx).exp() + (narrow - mx).exp()).ln())
}

/// `(xi, psi)` from central finite differences of the mixture's negative
/// log-density along each axis: `psi = 2h / f''`, `xi = phi - f'/f''` per
/// component.
///
/// The differences are taken on `f(phi + d) - f(phi)`, evaluated through the
/// component responsibilities at `phi` with `ln_1p`/`exp_m1`, so they keep
/// full relative precision however flat the broad component is.
pub fn taylor_fd_oracle<T: Scalar>(pi_bwd: f64, phi: T, c: f64, epsilon: f64) -> (T, f64) {
    let h = T::GAUSS_SCALE;
    let om = field_omega::<T>(pi_bwd, epsilon);
    let u = phi.scaled(epsilon - 1.0);
    let log_broad = (1.0 - om).ln() + mixture_eps_weight::<T>(epsilon).ln() - h * u.abs2() / c;
    let log_narrow = om.ln();
    let (w_b, w_n) = if log_narrow == f64::NEG_INFINITY {
        (1.0, 0.0)
    } else if log_broad == f64::NEG_INFINITY {
        (0.0, 1.0)
    } else {
        let d = log_narrow - log_broad;
        let wn = 1.0 / (1.0 + (-d).exp());
        (1.0 - wn, wn)
    };
    // g(delta) = f(phi + delta) - f(phi)
    let g = |delta: T| {
        let beta = -h * (2.0 * epsilon * (u.conj() * delta).re() + epsilon * epsilon * delta.abs2()) / c;
        let nu = -h * delta.abs2() / c;
        -(w_b * beta.exp_m1() + w_n * nu.exp_m1()).ln_1p()
    };
    let step = if w_n < 1e-30 {
        1e-3 * c.sqrt() / epsilon
    } else {
        1e-4 * c.sqrt()
    };
    let along = |dir: T| {
        let p = g(dir.scaled(step));
        let m = g(dir.scaled(-step));
        ((p - m) / (2.0 * step), (p + m) / (step * step))
    };
    let (d1r, d2) = along(T::from_parts(1.0, 0.0));
    let d1i = if T::COMPONENTS == 2 {
        along(T::from_parts(0.0, 1.0)).0
    } else {
        0.0
    };
    let psi = 2.0 * h / d2;
    let xi = T::from_parts(phi.re() - d1r / d2, phi.im() - d1i / d2);
    (xi, psi)
}

/// Expected complete-data log-likelihood terms of the amplitude process,
/// assembled directly from the posterior moments. `sigma2` is held fixed in
/// the first-frame term; the transition terms use `alpha^2 rho`.
pub fn q_amplitude<T: Scalar>(
    post: &PosteriorSummary<T>,
    zeta: T,
    alpha: f64,
    rho: f64,
    sigma2: f64,
    include_first: bool,
) -> f64 {
    let (n, frames) = (post.n(), post.frames());
    let mut q = 0.0;
    for i in 0..n {
        if include_first {
            let e = post.theta_var[(i, 0)] + (post.theta_mean[(i, 0)] - zeta).abs2();
            q -= e / sigma2 + sigma2.ln();
        }
        for t in 1..frames {
            let m1 = post.theta_mean[(i, t)];
            let m0 = post.theta_mean[(i, t - 1)];
            let e11 = post.theta_var[(i, t)] + m1.abs2();
            let e00 = post.theta_var[(i, t - 1)] + m0.abs2();
            let lag = post.theta_lag1[(i, t - 1)];
            let g = 1.0 - alpha;
            // E|theta1 - g theta0 - alpha zeta|^2 expanded term by term
            let e = e11 + g * g * e00 + alpha * alpha * zeta.abs2()
                - 2.0 * g * lag.re()
                - 2.0 * alpha * (m1.conj() * zeta).re()
                + 2.0 * alpha * g * (m0.conj() * zeta).re();
            let var = alpha * alpha * rho;
            q -= e / var + var.ln();
        }
    }
    q
}

/// Bernoulli log-likelihood of `lambda` given the posterior activities.
pub fn q_lambda<T: Scalar>(post: &PosteriorSummary<T>, lambda: f64) -> f64 {
    post.s_post
        .iter()
        .map(|&s| s * lambda.ln() + (1.0 - s) * (1.0 - lambda).ln())
        .sum()
}

/// Expected measurement log-likelihood as a function of `sigma_e^2`, with
/// `E||y - A x||^2` replaced by `||y - A mu||^2 + 1^T v`.
pub fn q_sigma_e2<T: Scalar>(problem: &MmvProblem<T>, post: &PosteriorSummary<T>, sigma_e2: f64) -> f64 {
    let (_, m, frames) = problem.dims();
    let mut energy = 0.0;
    for t in 0..frames {
        let op = problem.operator(t);
        let mut ax = DVector::<T>::zeros(m);
        op.apply(&post.x_mean.column(t).into_owned(), &mut ax);
        energy += (problem.observation(t) - ax).norm_squared();
    }
    energy += post.x_var.iter().sum::<f64>();
    -(energy / sigma_e2 + (m * frames) as f64 * sigma_e2.ln())
}
