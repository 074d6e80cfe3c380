//! Signal model: hyperparameters, problem containers and the synthetic
//! instance generator.
//!
//! Each coefficient is `x_n^(t) = s_n * theta_n^(t)` with a Bernoulli support
//! indicator `s_n` and a stationary first-order Gauss-Markov amplitude
//! `theta_n^(t) = (1 - alpha)(theta_n^(t-1) - zeta) + alpha w_n^(t) + zeta`,
//! `w ~ N(0, rho)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::operator::{DenseOperator, FnOperator, LinearOperator, SharedOperator};

/// Hyperparameter set `{lambda, zeta, alpha, rho, sigma_e^2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct ModelParams<T: Scalar> {
    /// Activity probabilities; a single entry is broadcast to every index.
    pub lambda: Vec<f64>,
    pub zeta: T,
    pub alpha: f64,
    pub rho: f64,
    pub sigma_e2: f64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(lambda: f64, zeta: T, alpha: f64, rho: f64, sigma_e2: f64) -> Self {
        Self {
            lambda: vec![lambda],
            zeta,
            alpha,
            rho,
            sigma_e2,
        }
    }

    /// Parameters whose amplitude process has stationary variance `sigma2`.
    pub fn with_stationary_variance(
        lambda: f64,
        zeta: T,
        alpha: f64,
        sigma2: f64,
        sigma_e2: f64,
    ) -> Self {
        Self::new(lambda, zeta, alpha, rho_for_variance(alpha, sigma2), sigma_e2)
    }

    #[inline]
    pub fn lambda_at(&self, n: usize) -> f64 {
        if self.lambda.len() == 1 {
            self.lambda[0]
        } else {
            self.lambda[n]
        }
    }

    /// Mean activity probability (the common `lambda` when broadcast).
    pub fn mean_lambda(&self) -> f64 {
        self.lambda.iter().sum::<f64>() / self.lambda.len() as f64
    }

    /// `alpha rho / (2 - alpha)`, without the degeneracy check.
    #[inline]
    pub fn sigma2(&self) -> f64 {
        self.alpha * self.rho / (2.0 - self.alpha)
    }

    /// Conditional variance `alpha^2 rho` of one transition.
    #[inline]
    pub fn transition_variance(&self) -> f64 {
        self.alpha * self.alpha * self.rho
    }

    pub fn steady_state_variance(&self) -> Result<f64> {
        steady_state_variance(self.alpha, self.rho)
    }

    /// Checks parameter domains; `n` additionally checks the length of a
    /// per-index `lambda`.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        if self.lambda.is_empty() {
            return Err(Error::Parameter("lambda must not be empty".into()));
        }
        if let Some(n) = n {
            if self.lambda.len() != 1 && self.lambda.len() != n {
                return Err(Error::Parameter(format!(
                    "lambda has {} entries, expected 1 or {n}",
                    self.lambda.len()
                )));
            }
        }
        for &l in &self.lambda {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::Parameter(format!("lambda = {l} outside [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!(
                "alpha = {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Parameter(format!("rho = {} must be positive", self.rho)));
        }
        if !(self.sigma_e2 >= 0.0) || !self.sigma_e2.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma_e2 = {} must be nonnegative",
                self.sigma_e2
            )));
        }
        if !self.zeta.is_finite_scalar() {
            return Err(Error::Parameter("zeta must be finite".into()));
        }
        Ok(())
    }
}

/// Stationary variance `alpha rho / (2 - alpha)` of the amplitude process.
pub fn steady_state_variance(alpha: f64, rho: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        if alpha == 0.0 {
            return Err(Error::DegenerateProcess);
        }
        return Err(Error::Parameter(format!("alpha = {alpha} outside (0, 1]")));
    }
    if !(rho > 0.0) {
        return Err(Error::Parameter(format!("rho = {rho} must be positive")));
    }
    Ok(alpha * rho / (2.0 - alpha))
}

/// Perturbation variance giving stationary variance `sigma2`.
pub fn rho_for_variance(alpha: f64, sigma2: f64) -> f64 {
    sigma2 * (2.0 - alpha) / alpha
}

/// Spike-and-slab prior of a single coefficient, split into its point mass at
/// zero and its continuous part evaluated at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSlabDensity {
    /// Probability mass `1 - lambda_n` sitting at `x = 0`.
    pub spike_mass: f64,
    /// `lambda_n N(x; zeta, sigma^2)`.
    pub slab_density: f64,
}

pub fn spike_slab_prior_density<T: Scalar>(x: T, params: &ModelParams<T>, n: usize) -> SpikeSlabDensity {
    let lambda = params.lambda_at(n);
    let slab_density = if lambda > 0.0 {
        lambda * T::log_normal_pdf(x, params.zeta, params.sigma2()).exp()
    } else {
        0.0
    };
    SpikeSlabDensity {
        spike_mass: 1.0 - lambda,
        slab_density,
    }
}

/// One MMV problem: `y^(t) = A^(t) x^(t) + e^(t)`, `t = 0..T`.
#[derive(Clone)]
pub struct MmvProblem<T: Scalar> {
    operators: Vec<SharedOperator<T>>,
    observations: Vec<DVector<T>>,
    n: usize,
    m: usize,
    shared_matrix: bool,
}

impl<T: Scalar> std::fmt::Debug for MmvProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MmvProblem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("t", &self.observations.len())
            .field("shared_matrix", &self.shared_matrix)
            .finish()
    }
}

impl<T: Scalar> MmvProblem<T> {
    /// One operator per frame.
    pub fn new(operators: Vec<SharedOperator<T>>, observations: Vec<DVector<T>>) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::Dimension("need at least one frame".into()));
        }
        if operators.len() != observations.len() {
            return Err(Error::Dimension(format!(
                "{} operators for {} observation vectors",
                operators.len(),
                observations.len()
            )));
        }
        let (m, n) = (operators[0].nrows(), operators[0].ncols());
        if m == 0 || n == 0 {
            return Err(Error::Dimension("empty measurement matrix".into()));
        }
        for (t, (op, y)) in operators.iter().zip(&observations).enumerate() {
            if op.nrows() != m || op.ncols() != n {
                return Err(Error::Dimension(format!(
                    "frame {t}: operator is {}x{}, expected {m}x{n}",
                    op.nrows(),
                    op.ncols()
                )));
            }
            if y.len() != m {
                return Err(Error::Dimension(format!(
                    "frame {t}: observation has length {}, expected {m}",
                    y.len()
                )));
            }
        }
        let shared_matrix = operators.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1]));
        Ok(Self {
            operators,
            observations,
            n,
            m,
            shared_matrix,
        })
    }

    /// Common-matrix MMV problem (stored once, referenced by every frame).
    pub fn with_shared_operator(operator: SharedOperator<T>, observations: Vec<DVector<T>>) -> Result<Self> {
        let ops = vec![operator; observations.len()];
        Self::new(ops, observations)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn frames(&self) -> usize {
        self.observations.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.frames())
    }

    pub fn is_shared_matrix(&self) -> bool {
        self.shared_matrix
    }

    pub fn operator(&self, t: usize) -> &dyn LinearOperator<T> {
        &*self.operators[t]
    }

    pub fn shared_operator(&self, t: usize) -> &SharedOperator<T> {
        &self.operators[t]
    }

    pub fn observation(&self, t: usize) -> &DVector<T> {
        &self.observations[t]
    }

    pub fn observations(&self) -> &[DVector<T>] {
        &self.observations
    }

    /// Dense copies of the distinct measurement matrices, one per frame.
    pub fn dense_matrices(&self) -> Vec<DMatrix<T>> {
        if self.shared_matrix {
            let a = crate::operator::to_dense(self.operator(0));
            vec![a; self.frames()]
        } else {
            (0..self.frames())
                .map(|t| crate::operator::to_dense(self.operator(t)))
                .collect()
        }
    }

    /// `sum_t ||y^(t) - A^(t) x^(t)||^2` for an `N x T` estimate.
    pub fn residual_energy(&self, x: &DMatrix<T>) -> f64 {
        let mut ax = DVector::zeros(self.m);
        let mut total = 0.0;
        for t in 0..self.frames() {
            let xt = x.column(t).into_owned();
            self.operator(t).apply(&xt, &mut ax);
            total += self.observations[t]
                .iter()
                .zip(ax.iter())
                .map(|(&y, &a)| (y - a).abs2())
                .sum::<f64>();
        }
        total
    }
}

/// Synthetic ground truth; arrays are `N x T` with column `t` holding frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    pub support: Vec<bool>,
    pub thetas: DMatrix<T>,
    pub signals: DMatrix<T>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn k(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.support
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// i.i.d. Gaussian entries, columns scaled to unit norm.
    #[default]
    IidGaussianUnitColumns,
    /// Same matrices, exposed to the solver only through forward/adjoint
    /// callbacks.
    ImplicitOperatorHook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct GenConfig<T: Scalar> {
    pub params: ModelParams<T>,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    /// Target SNR in dB; when set, overrides `params.sigma_e2`. `+inf` gives
    /// noiseless measurements.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Matrix innovation rate; 0 keeps one common matrix.
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub matrix_kind: MatrixKind,
    pub seed: u64,
}

impl<T: Scalar> GenConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.t == 0 {
            return Err(Error::Dimension(format!(
                "need N, M, T >= 1 (got {}, {}, {})",
                self.n, self.m, self.t
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Parameter(format!("beta = {} outside [0, 1]", self.beta)));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::Parameter("snr_db is NaN".into()));
            }
        }
        self.params.validate(Some(self.n))
    }
}

/// A generated problem together with its ground truth and the parameters that
/// produced it (`sigma_e2` resolved from the SNR when requested).
#[derive(Debug, Clone)]
pub struct Instance<T: Scalar> {
    pub problem: MmvProblem<T>,
    pub truth: GroundTruth<T>,
    pub params: ModelParams<T>,
    pub seed: u64,
    pub beta: f64,
    pub snr_db: Option<f64>,
}

fn gaussian_unit_columns<T: Scalar, R: Rng>(rng: &mut R, m: usize, n: usize) -> DMatrix<T> {
    let var = 1.0 / m as f64;
    let mut a = DMatrix::from_fn(m, n, |_, _| T::sample_normal(rng, var));
    for mut col in a.column_iter_mut() {
        let norm = col.iter().map(|v| v.abs2()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v = v.scaled(1.0 / norm));
        }
    }
    a
}

pub fn generate_instance<T: Scalar>(cfg: &GenConfig<T>) -> Result<Instance<T>> {
    cfg.validate()?;
    let (n, m, frames) = (cfg.n, cfg.m, cfg.t);
    let p = &cfg.params;
    let sigma2 = p.steady_state_variance()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let support: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < p.lambda_at(i)).collect();

    let mut thetas = DMatrix::<T>::zeros(n, frames);
    let innovation_var = p.rho;
    for i in 0..n {
        let mut th = p.zeta + T::sample_normal(&mut rng, sigma2);
        thetas[(i, 0)] = th;
        for t in 1..frames {
            let w = T::sample_normal(&mut rng, innovation_var);
            th = (th - p.zeta).scaled(1.0 - p.alpha) + w.scaled(p.alpha) + p.zeta;
            thetas[(i, t)] = th;
        }
    }
    let mut signals = thetas.clone();
    for (i, &s) in support.iter().enumerate() {
        if !s {
            signals.row_mut(i).fill(T::zero());
        }
    }

    let mut matrices = vec![gaussian_unit_columns::<T, _>(&mut rng, m, n)];
    if cfg.beta > 0.0 {
        let b = cfg.beta;
        let u_var = (1.0 - (1.0 - b) * (1.0 - b)) / (b * b * m as f64);
        for t in 1..frames {
            let prev = &matrices[t - 1];
            let next = DMatrix::from_fn(m, n, |r, c| {
                prev[(r, c)].scaled(1.0 - b) + T::sample_normal(&mut rng, u_var).scaled(b)
            });
            matrices.push(next);
        }
    }

    let mut clean = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = &matrices[t.min(matrices.len() - 1)];
        clean.push(a * signals.column(t));
    }
    let sigma_e2 = match cfg.snr_db {
        Some(snr) if snr == f64::INFINITY => 0.0,
        Some(snr) => {
            let energy: f64 = clean.iter().map(|v| v.norm_squared()).sum();
            energy / ((frames * m) as f64 * 10f64.powf(snr / 10.0))
        }
        None => p.sigma_e2,
    };
    let observations: Vec<DVector<T>> = clean
        .into_iter()
        .map(|ax| {
            if sigma_e2 > 0.0 {
                ax.map(|v| v + T::sample_normal(&mut rng, sigma_e2))
            } else {
                ax
            }
        })
        .collect();

    let wrap = |a: DMatrix<T>| -> SharedOperator<T> {
        match cfg.matrix_kind {
            MatrixKind::IidGaussianUnitColumns => Arc::new(DenseOperator::new(a)),
            MatrixKind::ImplicitOperatorHook => Arc::new(FnOperator::from_dense(a)),
        }
    };
    let problem = if matrices.len() == 1 {
        let op = wrap(matrices.pop().expect("one matrix"));
        MmvProblem::with_shared_operator(op, observations)?
    } else {
        MmvProblem::new(matrices.into_iter().map(wrap).collect(), observations)?
    };

    let mut params = p.clone();
    params.sigma_e2 = sigma_e2;
    Ok(Instance {
        problem,
        truth: GroundTruth {
            support,
            thetas,
            signals,
        },
        params,
        seed: cfg.seed,
        beta: cfg.beta,
        snr_db: cfg.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn base_cfg(n: usize, m: usize, t: usize) -> GenConfig<f64> {
        GenConfig {
            params: ModelParams::with_stationary_variance(0.2, 0.0, 0.1, 1.0, 1e-2),
            n,
            m,
            t,
            snr_db: Some(25.0),
            beta: 0.0,
            matrix_kind: MatrixKind::IidGaussianUnitColumns,
            seed: 7,
        }
    }

    #[test]
    fn steady_state_variance_examples() {
        assert_eq!(steady_state_variance(1.0, 2.0).unwrap(), 2.0);
        assert!((steady_state_variance(2.0 / 3.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let rho = rho_for_variance(0.10, 1.0);
        assert!((rho - 19.0).abs() < 1e-12);
        assert!((steady_state_variance(0.10, rho).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(steady_state_variance(0.0, 1.0), Err(Error::DegenerateProcess)));
        assert!(steady_state_variance(0.5, 0.0).is_err());
    }

    #[test]
    fn spike_slab_density_examples() {
        let p = ModelParams::<f64>::new(0.5, 0.0, 1.0, 1.0, 0.0);
        let d = spike_slab_prior_density(0.0, &p, 0);
        assert!((d.slab_density - 0.5 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((d.slab_density - 0.19947).abs() < 1e-5);
        assert_eq!(d.spike_mass, 0.5);

        let p0 = ModelParams::<f64>::new(0.0, 0.0, 1.0, 1.0, 0.0);
        let d0 = spike_slab_prior_density(0.3, &p0, 0);
        assert_eq!((d0.spike_mass, d0.slab_density), (1.0, 0.0));

        let near_one = ModelParams::<f64>::new(1.0 - 1e-15, 0.0, 1.0, 1.0, 0.0);
        let d1 = spike_slab_prior_density(0.7, &near_one, 0);
        let gauss = (-0.49f64 / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!(d1.spike_mass < 1e-14);
        assert!((d1.slab_density - gauss).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut cfg = base_cfg(10, 5, 2);
        cfg.params.lambda = vec![1.0];
        assert!(matches!(generate_instance(&cfg), Err(Error::Parameter(_))));
        let mut cfg = base_cfg(10, 5, 2);
        cfg.params.rho = 0.0;
        assert!(matches!(generate_instance(&cfg), Err(Error::Parameter(_))));
        let mut cfg = base_cfg(10, 5, 2);
        cfg.params.rho = -1.0;
        assert!(generate_instance(&cfg).is_err());
    }

    #[test]
    fn signals_follow_support() {
        let inst = generate_instance(&base_cfg(200, 50, 4)).unwrap();
        let tr = &inst.truth;
        for i in 0..200 {
            for t in 0..4 {
                let expect = if tr.support[i] { tr.thetas[(i, t)] } else { 0.0 };
                assert_eq!(tr.signals[(i, t)], expect);
            }
        }
        assert_eq!(tr.k(), tr.support_indices().len());
    }

    #[test]
    fn noiseless_limit_and_shared_matrix() {
        let mut cfg = base_cfg(40, 20, 3);
        cfg.snr_db = Some(f64::INFINITY);
        let inst = generate_instance(&cfg).unwrap();
        assert_eq!(inst.params.sigma_e2, 0.0);
        assert!(inst.problem.is_shared_matrix());
        assert!(inst.problem.residual_energy(&inst.truth.signals) == 0.0);
        let mats = inst.problem.dense_matrices();
        for c in mats[0].column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn snr_formula_is_exact() {
        let cfg = base_cfg(100, 40, 4);
        let inst = generate_instance(&cfg).unwrap();
        let mats = inst.problem.dense_matrices();
        let energy: f64 = (0..4)
            .map(|t| (&mats[t] * inst.truth.signals.column(t)).norm_squared())
            .sum();
        let expect = energy / (4.0 * 40.0 * 10f64.powf(2.5));
        assert!((inst.params.sigma_e2 - expect).abs() <= 1e-15 * expect.max(1e-300));
    }

    #[test]
    fn beta_one_gives_independent_unit_norm_columns() {
        let mut cfg = base_cfg(400, 30, 2);
        cfg.beta = 1.0;
        let inst = generate_instance(&cfg).unwrap();
        assert!(!inst.problem.is_shared_matrix());
        let mats = inst.problem.dense_matrices();
        let mean_sq: f64 = mats[1].column_iter().map(|c| c.norm_squared()).sum::<f64>() / 400.0;
        assert!((mean_sq - 1.0).abs() < 0.02, "mean squared column norm {mean_sq}");
        // entrywise sample correlation between A^(1) and A^(2)
        let a = mats[0].as_slice();
        let b = mats[1].as_slice();
        let len = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / len, b.iter().sum::<f64>() / len);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / len;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / len;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / len;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 3.0 / len.sqrt(), "corr {corr}");
    }

    #[test]
    fn time_varying_column_norms_hold_in_expectation() {
        let mut cfg = base_cfg(1000, 100, 3);
        cfg.beta = 0.3;
        let inst = generate_instance(&cfg).unwrap();
        let mats = inst.problem.dense_matrices();
        for a in &mats[1..] {
            let mean_sq = a.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 1000.0;
            assert!((mean_sq - 1.0).abs() < 0.02, "{mean_sq}");
        }
    }

    #[test]
    fn generator_is_deterministic_and_supports_complex() {
        let cfg = base_cfg(30, 10, 3);
        let a = generate_instance(&cfg).unwrap();
        let b = generate_instance(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.problem.observations(), b.problem.observations());

        let ccfg = GenConfig::<Complex64> {
            params: ModelParams::with_stationary_variance(0.2, Complex64::new(0.0, 0.0), 0.1, 1.0, 0.0),
            n: 30,
            m: 10,
            t: 3,
            snr_db: Some(20.0),
            beta: 0.1,
            matrix_kind: MatrixKind::ImplicitOperatorHook,
            seed: 3,
        };
        let c = generate_instance(&ccfg).unwrap();
        assert_eq!(c.problem.dims(), (30, 10, 3));
        assert!(c.problem.operator(0).as_dense().is_none());
    }
}
