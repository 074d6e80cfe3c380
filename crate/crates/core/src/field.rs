//! Scalar fields supported by the solver.
//!
//! Everything numeric in the crate is generic over [`Scalar`], implemented for
//! `f64` (real-valued model) and [`Complex64`] (circularly-symmetric complex
//! model). Gaussian densities differ between the two only through
//! [`Scalar::GAUSS_SCALE`]: `log N(x; m, v) = -h (|x - m|^2 / v + ln v) + const`
//! with `h = 1/2` (real) or `h = 1` (complex).

use nalgebra::ComplexField;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Real,
    Complex,
}

impl std::fmt::Display for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldKind::Real => f.write_str("real"),
            FieldKind::Complex => f.write_str("complex"),
        }
    }
}

pub trait Scalar:
    ComplexField<RealField = f64>
    + Copy
    + Default
    + Debug
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    const KIND: FieldKind;
    /// Exponent scale `h` of the Gaussian density (1/2 real, 1 complex).
    const GAUSS_SCALE: f64;
    /// Number of real components per scalar.
    const COMPONENTS: usize;

    /// Draws from `N(0, var)` (real) or `CN(0, var)` (complex).
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Self;

    fn re(self) -> f64;
    fn im(self) -> f64;
    /// Builds a scalar from real/imaginary parts; the imaginary part is
    /// dropped for the real field.
    fn from_parts(re: f64, im: f64) -> Self;

    #[inline]
    fn abs2(self) -> f64 {
        self.modulus_squared()
    }

    #[inline]
    fn conj(self) -> Self {
        self.conjugate()
    }

    #[inline]
    fn scaled(self, a: f64) -> Self {
        self.scale(a)
    }

    #[inline]
    fn is_finite_scalar(self) -> bool {
        self.re().is_finite() && self.im().is_finite()
    }

    /// Log normalizer `h * ln(pi / h)` per scalar dimension.
    #[inline]
    fn log_norm_const() -> f64 {
        Self::GAUSS_SCALE * (std::f64::consts::PI / Self::GAUSS_SCALE).ln()
    }

    /// `ln N(x; mean, var)` in this field.
    #[inline]
    fn log_normal_pdf(x: Self, mean: Self, var: f64) -> f64 {
        -Self::GAUSS_SCALE * ((x - mean).abs2() / var + var.ln()) - Self::log_norm_const()
    }
}

impl Scalar for f64 {
    const KIND: FieldKind = FieldKind::Real;
    const GAUSS_SCALE: f64 = 0.5;
    const COMPONENTS: usize = 1;

    #[inline]
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        z * var.sqrt()
    }

    #[inline]
    fn re(self) -> f64 {
        self
    }

    #[inline]
    fn im(self) -> f64 {
        0.0
    }

    #[inline]
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    const KIND: FieldKind = FieldKind::Complex;
    const GAUSS_SCALE: f64 = 1.0;
    const COMPONENTS: usize = 2;

    #[inline]
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Self {
        let s = (0.5 * var).sqrt();
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex64::new(a * s, b * s)
    }

    #[inline]
    fn re(self) -> f64 {
        self.re
    }

    #[inline]
    fn im(self) -> f64 {
        self.im
    }

    #[inline]
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}
