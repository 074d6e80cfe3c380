//! Gaussian message algebra and the single-Gaussian collapse of the
//! `f -> theta` message.

use serde::{Deserialize, Serialize};

use crate::field::Scalar;

/// Gaussian message in information form. Precision 0 is the uninformative
/// (infinite variance) message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianMsg<T: Scalar> {
    /// Precision-weighted mean `eta / kappa`.
    pub weighted_mean: T,
    /// Precision `1 / kappa`.
    pub precision: f64,
}

impl<T: Scalar> Default for GaussianMsg<T> {
    fn default() -> Self {
        Self::uninformative()
    }
}

impl<T: Scalar> GaussianMsg<T> {
    pub fn uninformative() -> Self {
        Self {
            weighted_mean: T::zero(),
            precision: 0.0,
        }
    }

    /// `var = +inf` yields the uninformative message.
    pub fn from_mean_var(mean: T, var: f64) -> Self {
        if var.is_infinite() {
            return Self::uninformative();
        }
        let precision = 1.0 / var;
        Self {
            weighted_mean: mean.scaled(precision),
            precision,
        }
    }

    #[inline]
    pub fn is_informative(&self) -> bool {
        self.precision > 0.0
    }

    pub fn mean(&self) -> Option<T> {
        self.is_informative()
            .then(|| self.weighted_mean.scaled(1.0 / self.precision))
    }

    pub fn var(&self) -> f64 {
        if self.is_informative() {
            1.0 / self.precision
        } else {
            f64::INFINITY
        }
    }

    /// Product of two Gaussian messages (precision addition).
    #[inline]
    pub fn fuse(self, other: Self) -> Self {
        Self {
            weighted_mean: self.weighted_mean + other.weighted_mean,
            precision: self.precision + other.precision,
        }
    }
}

/// `Omega(pi) = eps^2 pi / ((1 - pi) + eps^2 pi)`.
pub fn omega(pi: f64, epsilon: f64) -> f64 {
    omega_weight(pi, epsilon * epsilon)
}

/// `Omega` with the squared-epsilon factor supplied directly.
#[inline]
pub fn omega_weight(pi: f64, eps_pow: f64) -> f64 {
    if pi <= 0.0 {
        return 0.0;
    }
    if pi >= 1.0 {
        return 1.0;
    }
    eps_pow * pi / ((1.0 - pi) + eps_pow * pi)
}

/// Relative normalization of the broad mixture component: `eps^(2h)`, i.e.
/// `eps^2` for complex and `eps` for real scalars.
#[inline]
pub fn mixture_eps_weight<T: Scalar>(epsilon: f64) -> f64 {
    epsilon.powf(2.0 * T::GAUSS_SCALE)
}

/// Mixing weight of the informative component of the `f -> theta` mixture in
/// the field `T`.
#[inline]
pub fn field_omega<T: Scalar>(pi: f64, epsilon: f64) -> f64 {
    omega_weight(pi, mixture_eps_weight::<T>(epsilon))
}

/// Mean and variance of the Taylor-collapsed `f -> theta` message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorMsg<T: Scalar> {
    pub xi: T,
    pub psi: f64,
}

/// Collapses
/// `(1 - Omega) N(theta; phi/eps, c/eps^2) + Omega N(theta; phi, c)`
/// to one Gaussian via a second-order expansion of its negative log-density
/// about `theta = phi` (mixed partials and the real/imaginary curvature
/// difference are dropped).
///
/// The returned variance is the raw Taylor value: it is negative where the
/// mixture's negative log-density is locally concave.
pub fn taylor_approx<T: Scalar>(pi_bwd: f64, phi: T, c: f64, epsilon: f64) -> TaylorMsg<T> {
    let h = T::GAUSS_SCALE;
    let eps2 = epsilon * epsilon;
    let om = field_omega::<T>(pi_bwd, epsilon);
    let a = mixture_eps_weight::<T>(epsilon) * (1.0 - om);
    let a_bar = om;
    let k = 1.0 - 1.0 / epsilon;
    let b = h * eps2 * k * k * phi.abs2() / c;
    // gradient of the broad component's exponent at theta = phi
    let grad_r = 2.0 * h * eps2 * k * phi.re() / c;
    let grad_i = 2.0 * h * eps2 * k * phi.im() / c;
    let bend = c * grad_r * grad_r / (2.0 * h);

    // r = a e^{-b} / a_bar: relative density of the broad component at phi
    let log_r = if a_bar <= 0.0 {
        f64::INFINITY
    } else if a <= 0.0 {
        f64::NEG_INFINITY
    } else {
        a.ln() - b - a_bar.ln()
    };

    let (psi, resp) = if log_r > 0.0 {
        // divide through by r^2
        let inv_r = (-log_r).exp();
        let num = (1.0 + inv_r) * (1.0 + inv_r);
        let den = eps2 + (eps2 + 1.0 - bend) * inv_r + inv_r * inv_r;
        (c * num / den, 1.0 / (1.0 + inv_r))
    } else {
        let r = log_r.exp();
        let num = (1.0 + r) * (1.0 + r);
        let den = eps2 * r * r + (eps2 + 1.0 - bend) * r + 1.0;
        (c * num / den, r / (1.0 + r))
    };

    let shift = psi / (2.0 * h) * resp;
    let xi = T::from_parts(phi.re() - shift * grad_r, phi.im() - shift * grad_i);
    TaylorMsg { xi, psi }
}
