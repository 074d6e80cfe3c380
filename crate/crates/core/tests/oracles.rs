mod common;

use ampmmv::engine::{
    across_backward, across_forward, lag_one_moment, taylor_approx, theta_marginal, GaussianMsg,
    MessageState,
};
use ampmmv::sks::{sks_smooth, SksInput};
use ampmmv::verify::{dense_chain_posterior, taylor_fd_oracle};
use ampmmv::{Complex64, DMatrix, ModelParams, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sks_matches_dense<T: Scalar>(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let m = rng.random_range(2..=6);
    let t = rng.random_range(1..=4);
    let alpha = rng.random_range(0.05..1.0);
    let beta = if rng.random::<bool>() { 0.0 } else { 0.3 };
    let inst = (0..)
        .map(|j| common::instance::<T>(n, m, t, 0.5, alpha, 15.0, beta, seed + 7919 * j))
        .find(|i| i.truth.k() > 0)
        .unwrap();
    let mut support = inst.truth.support.clone();
    // keep K <= 4
    let mut k = 0;
    for s in support.iter_mut() {
        if *s {
            k += 1;
            if k > 4 {
                *s = false;
            }
        }
    }
    let out = sks_smooth(&SksInput {
        problem: &inst.problem,
        support: &support,
        params: &inst.params,
    })
    .unwrap();
    let dense = dense_chain_posterior(&inst.problem, &support, &inst.params);
    let idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();
    for (j, &i) in idx.iter().enumerate() {
        for f in 0..t {
            let a = out.theta_hat[(i, f)];
            let b = dense.means[(j, f)];
            assert!((a - b).abs2().sqrt() <= 1e-8 * b.abs2().sqrt().max(1e-3), "{a:?} vs {b:?}");
            assert!(common::rel_err(out.theta_cov_diag[(i, f)], dense.vars[(j, f)]) < 1e-8);
        }
    }
    assert!(common::rel_err(out.log_evidence, dense.log_evidence) < 1e-8);
    for i in 0..n {
        if !support[i] {
            assert_eq!(out.x_hat.row(i).iter().map(|v| v.abs2()).sum::<f64>(), 0.0);
        }
    }
}

#[test]
fn sks_equals_dense_conditioning() {
    for seed in 0..40 {
        sks_matches_dense::<f64>(seed);
        sks_matches_dense::<Complex64>(1000 + seed);
    }
}

/// Dense smoother for one scalar chain observed through Gaussian likelihoods
/// `N(obs_t; theta_t, r_t)`.
fn dense_scalar_chain(
    params: &ModelParams<f64>,
    obs: &[f64],
    r: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = obs.len();
    let s2 = params.sigma2();
    let g = 1.0 - params.alpha;
    let cov = DMatrix::from_fn(t, t, |a, b| s2 * g.powi((a as i32 - b as i32).abs()));
    let prec = cov.clone().try_inverse().unwrap() + DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(t, r.iter().map(|v| 1.0 / v)));
    let post = prec.try_inverse().unwrap();
    let prior_info = cov.clone().try_inverse().unwrap() * nalgebra::DVector::from_element(t, params.zeta);
    let info = prior_info + nalgebra::DVector::from_iterator(t, obs.iter().zip(r).map(|(o, v)| o / v));
    let mean = &post * info;
    let lag: Vec<f64> = (1..t).map(|k| post[(k, k - 1)] + mean[k] * mean[k - 1]).collect();
    ((0..t).map(|k| mean[k]).collect(), (0..t).map(|k| post[(k, k)]).collect(), lag)
}

#[test]
fn across_messages_reproduce_gaussian_smoother() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let frames = rng.random_range(2..=6);
        let alpha = rng.random_range(0.02..0.98);
        let params = ModelParams::with_stationary_variance(0.5, rng.random_range(-1.0..1.0), alpha, rng.random_range(0.3..3.0), 0.1);
        let obs: Vec<f64> = (0..frames).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r: Vec<f64> = (0..frames).map(|_| rng.random_range(0.05..2.0)).collect();
        let mut st = MessageState::<f64>::new(1, frames, &params);
        for t in 0..frames {
            st.theta_out.set(0, t, GaussianMsg::from_mean_var(obs[t], r[t]));
        }
        for t in 0..frames - 1 {
            across_forward(&mut st, &params, t);
        }
        for t in (1..frames).rev() {
            across_backward(&mut st, &params, t);
        }
        let (mean, var, lag) = dense_scalar_chain(&params, &obs, &r);
        for t in 0..frames {
            let m = theta_marginal(&st, 0, t);
            assert!((m.mean().unwrap() - mean[t]).abs() <= 1e-10 * mean[t].abs().max(1.0));
            assert!(common::rel_err(m.var(), var[t]) < 1e-10);
            if t > 0 {
                let l = lag_one_moment(&st, &params, 0, t);
                assert!((l - lag[t - 1]).abs() <= 1e-9 * lag[t - 1].abs().max(1.0), "{l} vs {}", lag[t - 1]);
            }
        }
    }
}

fn check_taylor<T: Scalar>(pi: f64, phi: T, c: f64, eps: f64) -> (f64, f64) {
    let tm = taylor_approx(pi, phi, c, eps);
    let (xi, psi) = taylor_fd_oracle(pi, phi, c, eps);
    let e_psi = common::rel_err(tm.psi, psi);
    let scale = xi.abs2().sqrt().max(c.sqrt());
    let e_xi = (tm.xi - xi).abs2().sqrt() / scale;
    (e_psi, e_xi)
}

#[test]
fn taylor_matches_finite_differences() {
    let (e_psi, e_xi) = check_taylor(0.3, Complex64::new(0.7, 0.0), 0.2, 1e-7);
    assert!(e_psi < 1e-3 && e_xi < 1e-3, "{e_psi} {e_xi}");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let pi = rng.random_range(0.0..1.0);
        let c = rng.random_range(0.01..2.0);
        let phi = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (a, b) = check_taylor(pi, phi, c, 1e-7);
        let (ar, br) = check_taylor(pi, phi.re, c, 1e-7);
        worst = (worst.0.max(a).max(ar), worst.1.max(b).max(br));
    }
    assert!(worst.0 < 1e-3 && worst.1 < 1e-3, "{worst:?}");
}

/// With a single cross term in the variance numerator (`r^2 + r + 1`
/// instead of `(1 + r)^2`) the collapse misses the finite-difference
/// curvature by far more than the tolerance wherever both components matter.
#[test]
fn single_cross_term_variant_is_rejected() {
    let (pi, phi, c, eps) = (0.3, Complex64::new(0.7, 0.0), 0.2, 1e-7);
    let tm = taylor_approx(pi, phi, c, eps);
    let (_, psi_fd) = taylor_fd_oracle(pi, phi, c, eps);
    // recover r from psi = c (1 + r)^2 / (eps^2 r^2 + r (1 + eps^2 - bend) + 1), bend ~ 0
    let r = tm.psi / c - 1.0;
    assert!(r > 0.1, "example must mix both components (r = {r})");
    let variant = c * (r * r + r + 1.0) / (eps * eps * r * r + r * (1.0 + eps * eps) + 1.0);
    assert!(common::rel_err(variant, psi_fd) > 1e-2);
    assert!(common::rel_err(tm.psi, psi_fd) < 1e-6);
}
