//! Oracle-equivalence checks of the fast paths against the reference
//! computations in [`crate::verify`], runnable outside the test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::amp::{f_threshold, g_threshold, LocalPrior};
use crate::engine::taylor_approx;
use crate::exact::enumerate_mmse;
use crate::field::Scalar;
use crate::model::{generate_instance, GenConfig, Instance, MatrixKind, ModelParams};
use crate::sks::{sks_smooth, SksInput};
use crate::verify::{dense_chain_posterior, spike_slab_moments, taylor_fd_oracle};
use num_complex::Complex64;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn dist<T: Scalar>(a: T, b: T) -> f64 {
    (a - b).abs2().sqrt()
}

fn small_instance<T: Scalar>(rng: &mut ChaCha8Rng, max_n: usize) -> Instance<T> {
    let n = rng.random_range(1..=max_n);
    let cfg = GenConfig {
        params: ModelParams::with_stationary_variance(0.5, T::zero(), rng.random_range(0.05..1.0), 1.0, 1e-2),
        n,
        m: rng.random_range(1..=6),
        t: rng.random_range(1..=4),
        snr_db: Some(15.0),
        beta: if rng.random::<bool>() { 0.0 } else { 0.3 },
        matrix_kind: MatrixKind::IidGaussianUnitColumns,
        seed: rng.random(),
    };
    let mut inst = generate_instance(&cfg).expect("valid generator config");
    if !(inst.params.sigma_e2 > 0.0) {
        inst.params.sigma_e2 = 1e-2;
    }
    inst
}

fn smoother_error<T: Scalar>(rng: &mut ChaCha8Rng) -> f64 {
    let inst = small_instance::<T>(rng, 8);
    let n = inst.problem.n();
    let mut support = vec![false; n];
    let k = rng.random_range(1..=n.min(4));
    for i in rand::seq::index::sample(rng, n, k) {
        support[i] = true;
    }
    let out = sks_smooth(&SksInput { problem: &inst.problem, support: &support, params: &inst.params })
        .expect("smoother runs");
    let dense = dense_chain_posterior(&inst.problem, &support, &inst.params);
    let mut worst = rel(out.log_evidence, dense.log_evidence);
    for (j, i) in (0..n).filter(|&i| support[i]).enumerate() {
        for f in 0..inst.problem.frames() {
            let scale = dense.means[(j, f)].abs2().sqrt().max(dense.vars[(j, f)].sqrt());
            worst = worst.max(dist(out.theta_hat[(i, f)], dense.means[(j, f)]) / scale);
            worst = worst.max(rel(out.theta_cov_diag[(i, f)], dense.vars[(j, f)]));
        }
    }
    worst
}

fn denoiser_error<T: Scalar>(rng: &mut ChaCha8Rng) -> f64 {
    let prior = LocalPrior::new(
        rng.random_range(0.01..0.99),
        T::from_parts(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        rng.random_range(0.05..5.0),
    );
    let c = rng.random_range(0.01..2.0);
    let phi = T::from_parts(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let (mean, var) = spike_slab_moments(phi, c, &prior);
    let e_mean = dist(f_threshold(phi, c, &prior), mean) / mean.abs2().sqrt().max(1e-300);
    e_mean.max(rel(g_threshold(phi, c, &prior), var))
}

fn collapse_error<T: Scalar>(rng: &mut ChaCha8Rng) -> f64 {
    let (pi, c) = (rng.random_range(0.0..1.0), rng.random_range(0.01..2.0));
    let phi = T::from_parts(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let eps = 1e-7;
    let got = taylor_approx(pi, phi, c, eps);
    let (xi, psi) = taylor_fd_oracle(pi, phi, c, eps);
    rel(got.psi, psi).max(dist(got.xi, xi) / xi.abs2().sqrt().max(c.sqrt()))
}

/// Enumeration against a mixture of dense per-support posteriors.
fn enumeration_error<T: Scalar>(rng: &mut ChaCha8Rng) -> f64 {
    let inst = small_instance::<T>(rng, 5);
    let (n, _, frames) = inst.problem.dims();
    let p = &inst.params;
    let got = enumerate_mmse(&inst.problem, p, n).expect("enumeration runs");
    let mut logw = Vec::with_capacity(1 << n);
    let mut posts = Vec::with_capacity(1 << n);
    for pattern in 0..1usize << n {
        let support: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
        let prior: f64 = (0..n)
            .map(|i| if support[i] { p.lambda_at(i).ln() } else { (1.0 - p.lambda_at(i)).ln() })
            .sum();
        let d = dense_chain_posterior(&inst.problem, &support, p);
        logw.push(prior + d.log_evidence);
        posts.push((support, d));
    }
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.iter().map(|l| (l - mx).exp()).sum();
    let mut x = nalgebra::DMatrix::<T>::zeros(n, frames);
    let mut s_post = vec![0.0; n];
    for (l, (support, d)) in logw.iter().zip(&posts) {
        let w = (l - mx).exp() / z;
        for (j, i) in (0..n).filter(|&i| support[i]).enumerate() {
            s_post[i] += w;
            for f in 0..frames {
                x[(i, f)] += d.means[(j, f)].scaled(w);
            }
        }
    }
    let scale = x.iter().map(|v| v.abs2()).sum::<f64>().sqrt().max(1e-12);
    let mut worst = (&got.x_mmse - &x).iter().map(|v| v.abs2()).sum::<f64>().sqrt() / scale;
    for (a, b) in got.support_post.iter().zip(&s_post) {
        worst = worst.max((a - b).abs());
    }
    worst
}

fn run<F>(name: &'static str, cases: usize, tol: f64, mut f: F) -> Check
where
    F: FnMut(bool) -> f64,
{
    let worst = (0..cases).map(|k| f(k % 2 == 0)).fold(0.0, f64::max);
    Check { name, cases, worst, tol }
}

/// Runs every check with draws seeded from `seed`, alternating real and
/// complex cases.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    checks.push(run("smoother vs dense conditioning", 100, 1e-8, |real| {
        if real { smoother_error::<f64>(&mut rng) } else { smoother_error::<Complex64>(&mut rng) }
    }));
    checks.push(run("denoiser vs spike-and-slab moments", 10_000, 1e-9, |real| {
        if real { denoiser_error::<f64>(&mut rng) } else { denoiser_error::<Complex64>(&mut rng) }
    }));
    checks.push(run("Gaussian collapse vs finite differences", 1000, 1e-3, |real| {
        if real { collapse_error::<f64>(&mut rng) } else { collapse_error::<Complex64>(&mut rng) }
    }));
    checks.push(run("enumeration vs dense support mixture", 40, 1e-8, |real| {
        if real { enumeration_error::<f64>(&mut rng) } else { enumeration_error::<Complex64>(&mut rng) }
    }));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest(3) {
            assert!(c.passed(), "{}: worst {:.2e} above {:.0e}", c.name, c.worst, c.tol);
        }
    }
}
