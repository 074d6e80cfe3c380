//! EM hyperparameter updates driven by the engine's posterior moments.
//!
//! Each update maximizes one coordinate of the expected complete-data
//! log-likelihood with the other parameters held at their latest values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::PosteriorSummary;
use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::model::{MmvProblem, ModelParams};
use crate::verify::golden_section_max;

pub const ALPHA_MIN: f64 = 1e-6;
pub const VARIANCE_MIN: f64 = 1e-12;
/// Upper bound applied to `lambda` so it stays inside `[0, 1)`.
pub const LAMBDA_MAX: f64 = 1.0 - 1e-9;

/// Which parameters an EM step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UpdateMask {
    pub lambda: bool,
    pub zeta: bool,
    pub alpha: bool,
    pub rho: bool,
    pub sigma_e2: bool,
}

impl UpdateMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// The default schedule: `alpha` on even and `rho` on odd iterations,
    /// never both. Neither is updated with a single frame.
    pub fn alternating(iteration: usize, frames: usize) -> Self {
        let dynamic = frames >= 2;
        Self {
            lambda: true,
            zeta: true,
            sigma_e2: true,
            alpha: dynamic && iteration.is_multiple_of(2),
            rho: dynamic && iteration % 2 == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "mask")]
pub enum MaskSchedule {
    #[default]
    Alternating,
    Fixed(UpdateMask),
}

impl MaskSchedule {
    pub fn mask(&self, iteration: usize, frames: usize) -> UpdateMask {
        match *self {
            MaskSchedule::Alternating => UpdateMask::alternating(iteration, frames),
            MaskSchedule::Fixed(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmState<T: Scalar> {
    pub params: ModelParams<T>,
    /// Parameters after each completed step, starting with the initial set.
    pub history: Vec<ModelParams<T>>,
    pub iteration: usize,
    pub schedule: MaskSchedule,
}

impl<T: Scalar> EmState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        Self {
            history: vec![params.clone()],
            params,
            iteration: 0,
            schedule: MaskSchedule::Alternating,
        }
    }

    pub fn with_schedule(mut self, schedule: MaskSchedule) -> Self {
        self.schedule = schedule;
        self
    }
}

#[inline]
fn second_moment<T: Scalar>(post: &PosteriorSummary<T>, n: usize, t: usize) -> f64 {
    post.theta_var[(n, t)] + post.theta_mean[(n, t)].abs2()
}

/// Mean posterior activity probability.
pub fn em_update_lambda<T: Scalar>(post: &PosteriorSummary<T>) -> f64 {
    let n = post.s_post.len();
    if n == 0 {
        return 0.0;
    }
    (post.s_post.iter().sum::<f64>() / n as f64).clamp(0.0, LAMBDA_MAX)
}

pub fn em_update_zeta<T: Scalar>(post: &PosteriorSummary<T>, params: &ModelParams<T>) -> T {
    let (n, frames) = (post.n(), post.frames());
    let a = params.alpha;
    let sigma2 = params.sigma2();
    let mut first = T::zero();
    for i in 0..n {
        first += post.theta_mean[(i, 0)];
    }
    if frames < 2 || a <= 0.0 {
        return first.scaled(1.0 / n as f64);
    }
    let mut innov = T::zero();
    for t in 1..frames {
        for i in 0..n {
            innov += post.theta_mean[(i, t)] - post.theta_mean[(i, t - 1)].scaled(1.0 - a);
        }
    }
    let rho = params.rho;
    let prec = (n * (frames - 1)) as f64 / rho + n as f64 / sigma2;
    (first.scaled(1.0 / sigma2) + innov.scaled(1.0 / (a * rho))).scaled(1.0 / prec)
}

/// Sufficient statistics of the transition terms for the `alpha` update:
/// `(sum E|d|^2, sum Re E[conj(d)(theta^(t-1) - zeta)], sum E|theta^(t-1) - zeta|^2)`
/// with `d = theta^(t) - theta^(t-1)`.
fn alpha_stats<T: Scalar>(post: &PosteriorSummary<T>, zeta: T) -> (f64, f64, f64) {
    let (n, frames) = (post.n(), post.frames());
    let (mut s_dd, mut s_dp, mut s_pp) = (0.0, 0.0, 0.0);
    for t in 1..frames {
        for i in 0..n {
            let m1 = post.theta_mean[(i, t)];
            let m0 = post.theta_mean[(i, t - 1)];
            let e11 = second_moment(post, i, t);
            let e00 = second_moment(post, i, t - 1);
            let cross = post.theta_lag1[(i, t - 1)].re();
            s_dd += e11 + e00 - 2.0 * cross;
            s_dp += cross - e00 - ((m1 - m0).conj() * zeta).re();
            s_pp += e00 - 2.0 * (m0.conj() * zeta).re() + zeta.abs2();
        }
    }
    (s_dd, s_dp, s_pp)
}

/// Expected complete-data log-likelihood of the transition terms as a
/// function of `alpha` (up to terms constant in `alpha`).
pub fn q_alpha<T: Scalar>(post: &PosteriorSummary<T>, params: &ModelParams<T>, alpha: f64) -> f64 {
    let (s_dd, s_dp, s_pp) = alpha_stats(post, params.zeta);
    let count = (post.n() * (post.frames() - 1)) as f64;
    -(s_dd / (alpha * alpha) + 2.0 * s_dp / alpha + s_pp) / params.rho - 2.0 * count * alpha.ln()
}

pub fn em_update_alpha<T: Scalar>(post: &PosteriorSummary<T>, params: &ModelParams<T>) -> Result<f64> {
    if post.frames() < 2 {
        return Err(Error::AlphaNotIdentifiable);
    }
    let (s_dd, s_dp, _) = alpha_stats(post, params.zeta);
    let count = (post.n() * (post.frames() - 1)) as f64;
    let b = 2.0 * s_dp / params.rho;
    let c = 2.0 * s_dd / params.rho;
    let disc = b * b + 8.0 * count * c;
    let raw = if disc >= 0.0 {
        (b + disc.sqrt()) / (4.0 * count)
    } else {
        golden_section_max(|a| q_alpha(post, params, a), ALPHA_MIN, 1.0, 1e-12)
    };
    Ok(if raw.is_finite() {
        raw.clamp(ALPHA_MIN, 1.0)
    } else {
        params.alpha
    })
}

/// `sum_{n, t >= 2} E|theta^(t) - (1 - alpha) theta^(t-1) - alpha zeta|^2`.
pub fn innovation_energy<T: Scalar>(post: &PosteriorSummary<T>, params: &ModelParams<T>) -> f64 {
    let (n, frames) = (post.n(), post.frames());
    let a = params.alpha;
    let g = 1.0 - a;
    let z = params.zeta;
    let mut s = 0.0;
    for t in 1..frames {
        for i in 0..n {
            let m1 = post.theta_mean[(i, t)];
            let m0 = post.theta_mean[(i, t - 1)];
            s += second_moment(post, i, t) + g * g * second_moment(post, i, t - 1) + a * a * z.abs2()
                - 2.0 * g * post.theta_lag1[(i, t - 1)].re()
                - 2.0 * a * (m1.conj() * z).re()
                + 2.0 * a * g * (m0.conj() * z).re();
        }
    }
    s
}

pub fn em_update_rho<T: Scalar>(post: &PosteriorSummary<T>, params: &ModelParams<T>) -> Result<f64> {
    if post.frames() < 2 {
        return Err(Error::RhoNotIdentifiable);
    }
    let a = params.alpha;
    if a <= 0.0 {
        return Err(Error::RhoNotIdentifiable);
    }
    let count = (post.n() * (post.frames() - 1)) as f64;
    let rho = innovation_energy(post, params) / (a * a * count);
    Ok(if rho.is_finite() {
        rho.max(VARIANCE_MIN)
    } else {
        params.rho
    })
}

/// `(sum_t ||y - A mu||^2 + 1^T v) / (T M)`.
pub fn em_update_sigma_e2<T: Scalar>(problem: &MmvProblem<T>, post: &PosteriorSummary<T>) -> f64 {
    let (_, m, frames) = problem.dims();
    let resid = problem.residual_energy(&post.x_mean);
    let var: f64 = post.x_var.iter().sum();
    ((resid + var) / (frames * m) as f64).max(VARIANCE_MIN)
}

/// One masked Gauss-Seidel sweep over the parameters; later updates see the
/// values produced by earlier ones in the same step.
pub fn em_step<T: Scalar>(
    problem: &MmvProblem<T>,
    post: &PosteriorSummary<T>,
    state: &mut EmState<T>,
) -> Result<UpdateMask> {
    let mask = state.schedule.mask(state.iteration, post.frames());
    let mut p = state.params.clone();
    if mask.lambda {
        p.lambda = vec![em_update_lambda(post)];
    }
    if mask.zeta {
        p.zeta = em_update_zeta(post, &p);
    }
    if mask.sigma_e2 {
        p.sigma_e2 = em_update_sigma_e2(problem, post);
    }
    if mask.alpha {
        p.alpha = em_update_alpha(post, &p)?;
    }
    if mask.rho {
        p.rho = em_update_rho(post, &p)?;
    }
    state.params = p;
    state.iteration += 1;
    state.history.push(state.params.clone());
    Ok(mask)
}

/// Data-driven starting point for EM.
pub fn initial_params<T: Scalar>(problem: &MmvProblem<T>, seed: u64) -> ModelParams<T> {
    let (n, m, frames) = problem.dims();
    let sigma_e2 = 1e-3;
    let lambda = (0.5 * m as f64 / n as f64).min(0.9);
    let alpha = 0.1;
    let y_energy = problem
        .observations()
        .iter()
        .map(|y| y.norm_squared())
        .sum::<f64>()
        / frames as f64;
    let a_energy = mean_frobenius2(problem, seed);
    let scale = a_energy * lambda;
    let mut sigma2 = (y_energy - m as f64 * sigma_e2) / scale;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        sigma2 = y_energy / scale;
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        sigma2 = 1.0;
    }
    ModelParams::with_stationary_variance(lambda, T::zero(), alpha, sigma2, sigma_e2)
}

/// Average `||A^(t)||_F^2`; implicit operators are estimated with Gaussian
/// probes.
pub fn mean_frobenius2<T: Scalar>(problem: &MmvProblem<T>, seed: u64) -> f64 {
    const PROBES: usize = 8;
    let frames = problem.frames();
    let distinct = if problem.is_shared_matrix() { 1 } else { frames };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for t in 0..distinct {
        let op = problem.operator(t);
        total += match op.as_dense() {
            Some(a) => a.norm_squared(),
            None => {
                let mut out = nalgebra::DVector::<T>::zeros(op.nrows());
                let mut acc = 0.0;
                for _ in 0..PROBES {
                    let g = nalgebra::DVector::from_fn(op.ncols(), |_, _| T::sample_normal(&mut rng, 1.0));
                    op.apply(&g, &mut out);
                    acc += out.norm_squared();
                }
                acc / PROBES as f64
            }
        };
    }
    total / distinct as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, GenConfig, MatrixKind};
    use crate::operator::DenseOperator;
    use crate::verify::q_amplitude;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};
    use std::sync::Arc;

    fn summary(theta: DMatrix<f64>, var: DMatrix<f64>, lag: DMatrix<f64>) -> PosteriorSummary<f64> {
        let (n, t) = theta.shape();
        PosteriorSummary {
            x_mean: theta.clone(),
            x_var: DMatrix::zeros(n, t),
            s_post: vec![0.5; n],
            theta_mean: theta,
            theta_var: var,
            theta_lag1: lag,
        }
    }

    /// Exact moments of a noiselessly observed chain: means are the
    /// realization, variances vanish.
    fn observed_chain(n: usize, frames: usize, alpha: f64, rho: f64, zeta: f64, seed: u64) -> PosteriorSummary<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma2 = alpha * rho / (2.0 - alpha);
        let first = Normal::new(zeta, sigma2.sqrt()).unwrap();
        let w = Normal::new(0.0, rho.sqrt()).unwrap();
        let mut theta = DMatrix::zeros(n, frames);
        for i in 0..n {
            theta[(i, 0)] = first.sample(&mut rng);
            for t in 1..frames {
                theta[(i, t)] = (1.0 - alpha) * (theta[(i, t - 1)] - zeta) + alpha * w.sample(&mut rng) + zeta;
            }
        }
        let lag = DMatrix::from_fn(n, frames - 1, |i, t| theta[(i, t + 1)] * theta[(i, t)]);
        summary(theta, DMatrix::zeros(n, frames), lag)
    }

    #[test]
    fn lambda_is_mean_activity() {
        let mut post = observed_chain(10, 2, 0.5, 1.0, 0.0, 1);
        post.s_post = vec![0.3; 10];
        assert!((em_update_lambda(&post) - 0.3).abs() < 1e-15);
        post.s_post = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        assert_eq!(em_update_lambda(&post), 0.3);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut post = observed_chain(1000, 2, 0.5, 1.0, 0.0, 1);
        post.s_post = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
        // Neumaier summation
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &v in &post.s_post {
            let t = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        let reference = (sum + comp) / 1000.0;
        assert!((em_update_lambda(&post) - reference).abs() <= 1e-15);
    }

    #[test]
    fn zeta_single_frame_is_mean() {
        let post = observed_chain(7, 1, 0.5, 1.0, 0.4, 3);
        let p = ModelParams::new(0.1, 0.0, 0.5, 1.0, 0.01);
        let mean = post.theta_mean.column(0).sum() / 7.0;
        assert!((em_update_zeta(&post, &p) - mean).abs() < 1e-15);
    }

    #[test]
    fn zeta_fixed_point_at_stationary_means() {
        let theta = DMatrix::from_element(5, 4, 0.7);
        let post = summary(theta, DMatrix::from_element(5, 4, 0.2), DMatrix::from_element(5, 3, 0.49));
        let p = ModelParams::new(0.1, 0.7, 0.35, 2.0, 0.01);
        assert!((em_update_zeta(&post, &p) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn zeta_maximizes_expected_log_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..20 {
            let alpha = rng.random_range(0.05..0.9);
            let rho = rng.random_range(0.5..3.0);
            let mut post = observed_chain(50, 4, alpha, rho, rng.random_range(-1.0..1.0), k);
            post.theta_var = DMatrix::from_fn(50, 4, |_, _| rng.random_range(0.0..0.3));
            let p = ModelParams::new(0.1, 0.0, alpha * 0.8, rho * 1.3, 0.01);
            let got = em_update_zeta(&post, &p);
            let oracle = golden_section_max(|z| q_amplitude(&post, z, p.alpha, p.rho, p.sigma2(), true), -5.0, 5.0, 1e-14);
            assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        }
    }

    #[test]
    fn alpha_requires_two_frames() {
        let post = observed_chain(5, 1, 0.5, 1.0, 0.0, 5);
        let p = ModelParams::new(0.1, 0.0, 0.5, 1.0, 0.01);
        assert!(matches!(em_update_alpha(&post, &p), Err(Error::AlphaNotIdentifiable)));
        assert!(matches!(em_update_rho(&post, &p), Err(Error::RhoNotIdentifiable)));
    }

    #[test]
    fn alpha_consistent_on_long_chain() {
        let (alpha, rho) = (0.5, 1.0);
        let post = observed_chain(2500, 5, alpha, rho, 0.0, 6);
        let p = ModelParams::new(0.1, 0.0, 0.2, rho, 0.01);
        let got = em_update_alpha(&post, &p).unwrap();
        assert!((got - alpha).abs() < 0.05, "{got}");
    }

    #[test]
    fn alpha_on_frozen_chain_matches_oracle() {
        let theta = DMatrix::from_fn(6, 4, |i, _| i as f64 * 0.3 - 0.5);
        let lag = DMatrix::from_fn(6, 3, |i, _| (i as f64 * 0.3 - 0.5).powi(2));
        let post = summary(theta, DMatrix::zeros(6, 4), lag);
        let p = ModelParams::new(0.1, 0.2, 0.3, 1.0, 0.01);
        let got = em_update_alpha(&post, &p).unwrap();
        assert!((0.0..=1.0).contains(&got));
        let oracle = golden_section_max(|a| q_amplitude(&post, p.zeta, a, p.rho, p.sigma2(), false), ALPHA_MIN, 1.0, 1e-14);
        assert!((got - oracle).abs() <= 1e-6 * oracle.max(1e-3), "{got} vs {oracle}");
    }

    #[test]
    fn rho_consistent_on_long_chain() {
        let (alpha, rho) = (0.3, 1.0);
        let post = observed_chain(3000, 5, alpha, rho, 0.0, 7);
        let p = ModelParams::new(0.1, 0.0, alpha, 4.0, 0.01);
        let got = em_update_rho(&post, &p).unwrap();
        assert!((got - 1.0).abs() < 0.05, "{got}");
    }

    #[test]
    fn rho_matches_plug_in_innovations() {
        let (alpha, zeta) = (0.4, 0.3);
        let post = observed_chain(40, 6, alpha, 2.0, zeta, 8);
        let p = ModelParams::new(0.1, zeta, alpha, 1.0, 0.01);
        let mut acc = 0.0;
        for i in 0..40 {
            for t in 1..6 {
                let d = post.theta_mean[(i, t)] - (1.0 - alpha) * post.theta_mean[(i, t - 1)] - alpha * zeta;
                acc += d * d / (alpha * alpha);
            }
        }
        let reference = acc / 200.0;
        let got = em_update_rho(&post, &p).unwrap();
        assert!((got - reference).abs() <= 1e-12 * reference);
    }

    #[test]
    fn rho_vanishes_on_chain_frozen_at_mean() {
        let zeta = 0.8;
        let post = summary(
            DMatrix::from_element(4, 3, zeta),
            DMatrix::zeros(4, 3),
            DMatrix::from_element(4, 2, zeta * zeta),
        );
        let p = ModelParams::new(0.1, zeta, 0.35, 1.0, 0.01);
        assert!(em_update_rho(&post, &p).unwrap() <= 1e-12);
        let p = ModelParams { alpha: 0.0, ..p };
        assert!(matches!(em_update_rho(&post, &p), Err(Error::RhoNotIdentifiable)));
    }

    fn problem_with(x: &DMatrix<f64>, noise: f64, seed: u64) -> MmvProblem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, t) = x.shape();
        let a = DMatrix::from_fn(6, n, |_, _| rng.random_range(-1.0..1.0));
        let ys = (0..t)
            .map(|f| &a * x.column(f) + DVector::from_fn(6, |_, _| noise * rng.random_range(-1.0..1.0)))
            .collect();
        MmvProblem::with_shared_operator(Arc::new(DenseOperator::new(a)), ys).unwrap()
    }

    #[test]
    fn noise_update_examples() {
        let x = DMatrix::from_fn(8, 3, |i, t| (i + t) as f64 * 0.1);
        let problem = problem_with(&x, 0.0, 9);
        let mut post = summary(x.clone(), DMatrix::zeros(8, 3), DMatrix::zeros(8, 2));
        post.x_var = DMatrix::zeros(8, 3);
        assert!(em_update_sigma_e2(&problem, &post) <= 1e-12);

        post.x_mean = DMatrix::zeros(8, 3);
        let energy: f64 = problem.observations().iter().map(|y| y.norm_squared()).sum();
        assert!((em_update_sigma_e2(&problem, &post) - energy / 18.0).abs() < 1e-14 * energy);

        let problem = problem_with(&x, 0.3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        post.x_mean = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        post.x_var = DMatrix::from_fn(8, 3, |_, _| rng.random_range(0.0..0.1));
        let a = problem.dense_matrices()[0].clone();
        let mut acc = 0.0;
        for t in 0..3 {
            for r in 0..6 {
                let mut ax = 0.0;
                for c in 0..8 {
                    ax += a[(r, c)] * post.x_mean[(c, t)];
                }
                acc += (problem.observation(t)[r] - ax).powi(2);
            }
        }
        acc += post.x_var.iter().sum::<f64>();
        let reference = acc / 18.0;
        assert!((em_update_sigma_e2(&problem, &post) - reference).abs() <= 1e-12 * reference);
    }

    #[test]
    fn empty_mask_leaves_parameters() {
        let post = observed_chain(10, 3, 0.5, 1.0, 0.0, 12);
        let problem = problem_with(&post.x_mean, 0.1, 13);
        let p = ModelParams::new(0.2, 0.1, 0.4, 1.5, 0.02);
        let mut st = EmState::new(p.clone()).with_schedule(MaskSchedule::Fixed(UpdateMask::none()));
        em_step(&problem, &post, &mut st).unwrap();
        assert_eq!(st.params, p);
        assert_eq!(st.history.len(), 2);
    }

    #[test]
    fn alternation_never_updates_alpha_and_rho_together() {
        let post = observed_chain(30, 4, 0.3, 1.0, 0.0, 14);
        let problem = problem_with(&post.x_mean, 0.1, 15);
        let mut st = EmState::new(ModelParams::new(0.2, 0.0, 0.5, 2.0, 0.02));
        let mut prev = st.params.clone();
        for k in 0..6 {
            let mask = em_step(&problem, &post, &mut st).unwrap();
            assert!(!(mask.alpha && mask.rho));
            assert_eq!(mask.alpha, k % 2 == 0);
            if mask.alpha {
                assert_eq!(st.params.rho, prev.rho);
            } else {
                assert_eq!(st.params.alpha, prev.alpha);
            }
            let p = &st.params;
            assert!(p.alpha >= ALPHA_MIN && p.alpha <= 1.0);
            assert!(p.rho > 0.0 && p.sigma_e2 > 0.0);
            assert!(p.lambda.iter().all(|&l| (0.0..1.0).contains(&l)));
            prev = p.clone();
        }
        assert_eq!(st.history.len(), 7);
        // single frame: neither dynamic parameter is touched
        let mask = UpdateMask::alternating(0, 1);
        assert!(!mask.alpha && !mask.rho && mask.lambda);
    }

    #[test]
    fn lambda_projected_below_one() {
        let mut post = observed_chain(4, 2, 0.5, 1.0, 0.0, 16);
        post.s_post = vec![1.0; 4];
        assert!(em_update_lambda(&post) < 1.0);
    }

    #[test]
    fn initialization_follows_data_energy() {
        let inst = generate_instance(&GenConfig {
            params: ModelParams::with_stationary_variance(0.1, 0.0, 0.1, 1.0, 0.0),
            n: 400,
            m: 120,
            t: 3,
            snr_db: Some(25.0),
            beta: 0.0,
            matrix_kind: MatrixKind::IidGaussianUnitColumns,
            seed: 17,
        })
        .unwrap();
        let p = initial_params(&inst.problem, 0);
        assert_eq!(p.sigma_e2, 1e-3);
        assert_eq!(p.lambda, vec![0.5 * 120.0 / 400.0]);
        assert_eq!(p.alpha, 0.1);
        assert_eq!(p.zeta, 0.0);
        let y_energy: f64 = inst.problem.observations().iter().map(|y| y.norm_squared()).sum::<f64>() / 3.0;
        let sigma2 = (y_energy - 120.0 * 1e-3) / (400.0 * 0.15);
        assert!((p.sigma2() - sigma2).abs() < 1e-12 * sigma2);
        assert!((p.rho - sigma2 * 1.9 / 0.1).abs() < 1e-9 * p.rho);

        let implicit = generate_instance(&GenConfig {
            matrix_kind: MatrixKind::ImplicitOperatorHook,
            ..GenConfig {
                params: ModelParams::with_stationary_variance(0.1, 0.0, 0.1, 1.0, 0.0),
                n: 400,
                m: 120,
                t: 3,
                snr_db: Some(25.0),
                beta: 0.0,
                matrix_kind: MatrixKind::IidGaussianUnitColumns,
                seed: 17,
            }
        })
        .unwrap();
        let est = mean_frobenius2(&implicit.problem, 1);
        assert!((est - 400.0).abs() < 0.3 * 400.0, "{est}");
    }
}
