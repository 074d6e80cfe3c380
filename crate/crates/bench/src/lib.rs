//! Benchmark fixtures shared by the criterion targets.

use ampmmv::{generate_instance, GenConfig, Instance, MatrixKind, ModelParams, Scalar};

/// Instance at undersampling `N/M = 4` with `M/K = 3`.
pub fn fixture<T: Scalar>(n: usize, t: usize, seed: u64) -> Instance<T> {
    let m = n / 4;
    generate_instance(&GenConfig {
        params: ModelParams::with_stationary_variance(m as f64 / (3.0 * n as f64), T::zero(), 0.1, 1.0, 1e-2),
        n,
        m,
        t,
        snr_db: Some(25.0),
        beta: 0.0,
        matrix_kind: MatrixKind::IidGaussianUnitColumns,
        seed,
    })
    .expect("valid fixture")
}
