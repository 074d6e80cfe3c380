use serde::{Deserialize, Serialize};

use super::messages::GaussianMsg;
use crate::amp::AmpState;
use crate::field::Scalar;
use crate::model::ModelParams;

/// Dense `N x T` array stored frame-major (each frame's column contiguous).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid<E> {
    n: usize,
    t: usize,
    data: Vec<E>,
}

impl<E: Clone> FrameGrid<E> {
    pub fn new(n: usize, t: usize, fill: E) -> Self {
        Self {
            n,
            t,
            data: vec![fill; n * t],
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> &E {
        &self.data[t * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, v: E) {
        self.data[t * self.n + i] = v;
    }

    pub fn column(&self, t: usize) -> &[E] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [E] {
        &mut self.data[t * self.n..(t + 1) * self.n]
    }

    /// Values of row `i` across all frames.
    pub fn iter_row(&self, i: usize) -> impl Iterator<Item = E> + '_
    where
        E: Copy,
    {
        (0..self.t).map(move |t| self.data[t * self.n + i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.data.iter()
    }
}

/// Every message of the factor graph, plus the per-frame AMP states.
#[derive(Debug, Clone)]
pub struct MessageState<T: Scalar> {
    /// `pi ->`: activity likelihood leaving each frame.
    pub pi_fwd: FrameGrid<f64>,
    /// `pi bar`: activity prior entering each frame.
    pub pi_bwd: FrameGrid<f64>,
    /// Amplitude message entering each frame (fusion of the two across messages).
    pub theta_into: FrameGrid<GaussianMsg<T>>,
    /// Taylor-collapsed amplitude message leaving each frame.
    pub theta_out: FrameGrid<GaussianMsg<T>>,
    /// Forward-in-time amplitude message arriving at `theta^(t)`.
    pub across_fwd: FrameGrid<GaussianMsg<T>>,
    /// Backward-in-time amplitude message arriving at `theta^(t)`.
    pub across_bwd: FrameGrid<GaussianMsg<T>>,
    pub amp: Vec<Option<AmpState<T>>>,
}

impl<T: Scalar> MessageState<T> {
    /// Agnostic initialization: `pi -> = 1/2`, interior across messages
    /// uninformative, prior at the first frame.
    pub fn new(n: usize, t: usize, params: &ModelParams<T>) -> Self {
        let u = GaussianMsg::uninformative();
        let mut s = Self {
            pi_fwd: FrameGrid::new(n, t, 0.5),
            pi_bwd: FrameGrid::new(n, t, 0.5),
            theta_into: FrameGrid::new(n, t, u),
            theta_out: FrameGrid::new(n, t, u),
            across_fwd: FrameGrid::new(n, t, u),
            across_bwd: FrameGrid::new(n, t, u),
            amp: vec![None; t],
        };
        s.set_prior_boundary(params);
        s
    }

    pub fn n(&self) -> usize {
        self.pi_fwd.rows()
    }

    pub fn frames(&self) -> usize {
        self.pi_fwd.frames()
    }

    /// Writes the prior `N(zeta, sigma^2)` into `across_fwd` at the first frame.
    pub fn set_prior_boundary(&mut self, params: &ModelParams<T>) {
        let prior = GaussianMsg::from_mean_var(params.zeta, params.sigma2());
        for v in self.across_fwd.column_mut(0) {
            *v = prior;
        }
    }
}
