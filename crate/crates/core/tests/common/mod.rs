#![allow(dead_code)]

use ampmmv::model::{generate_instance, GenConfig, Instance, MatrixKind, ModelParams};
use ampmmv::Scalar;

/// Instance with a prescribed support size drawn from `lambda`.
pub fn instance<T: Scalar>(
    n: usize,
    m: usize,
    t: usize,
    lambda: f64,
    alpha: f64,
    snr_db: f64,
    beta: f64,
    seed: u64,
) -> Instance<T> {
    generate_instance(&GenConfig {
        params: ModelParams::with_stationary_variance(lambda, T::zero(), alpha, 1.0, 1e-2),
        n,
        m,
        t,
        snr_db: Some(snr_db),
        beta,
        matrix_kind: MatrixKind::IidGaussianUnitColumns,
        seed,
    })
    .expect("valid generator config")
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
