//! Measurement operators.
//!
//! The solver only ever touches a measurement matrix through `A x` and
//! `A^H z`, so matrices may be stored densely or supplied as a pair of
//! callbacks.

use nalgebra::{DMatrix, DVector};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::field::Scalar;

pub trait LinearOperator<T: Scalar>: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `out = A x`
    fn apply(&self, x: &DVector<T>, out: &mut DVector<T>);

    /// `out = A^H z`
    fn apply_adjoint(&self, z: &DVector<T>, out: &mut DVector<T>);

    /// Dense backing storage, if there is one.
    fn as_dense(&self) -> Option<&DMatrix<T>> {
        None
    }
}

pub type SharedOperator<T> = Arc<dyn LinearOperator<T>>;

#[derive(Debug, Clone)]
pub struct DenseOperator<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn new(matrix: DMatrix<T>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn into_shared(self) -> SharedOperator<T> {
        Arc::new(self)
    }
}

impl<T: Scalar> LinearOperator<T> for DenseOperator<T> {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DVector<T>, out: &mut DVector<T>) {
        out.gemv(T::one(), &self.matrix, x, T::zero());
    }

    fn apply_adjoint(&self, z: &DVector<T>, out: &mut DVector<T>) {
        out.gemv_ad(T::one(), &self.matrix, z, T::zero());
    }

    fn as_dense(&self) -> Option<&DMatrix<T>> {
        Some(&self.matrix)
    }
}

type ApplyFn<T> = Box<dyn Fn(&DVector<T>, &mut DVector<T>) + Send + Sync>;

/// Matrix-free operator defined by a forward and an adjoint callback.
pub struct FnOperator<T: Scalar> {
    nrows: usize,
    ncols: usize,
    forward: ApplyFn<T>,
    adjoint: ApplyFn<T>,
}

impl<T: Scalar> FnOperator<T> {
    pub fn new<F, G>(nrows: usize, ncols: usize, forward: F, adjoint: G) -> Self
    where
        F: Fn(&DVector<T>, &mut DVector<T>) + Send + Sync + 'static,
        G: Fn(&DVector<T>, &mut DVector<T>) + Send + Sync + 'static,
    {
        Self {
            nrows,
            ncols,
            forward: Box::new(forward),
            adjoint: Box::new(adjoint),
        }
    }

    /// Hides a dense matrix behind callbacks.
    pub fn from_dense(matrix: DMatrix<T>) -> Self {
        let a = Arc::new(matrix);
        let b = Arc::clone(&a);
        let (m, n) = a.shape();
        Self::new(
            m,
            n,
            move |x, out| out.gemv(T::one(), &*a, x, T::zero()),
            move |z, out| out.gemv_ad(T::one(), &*b, z, T::zero()),
        )
    }
}

impl<T: Scalar> LinearOperator<T> for FnOperator<T> {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, x: &DVector<T>, out: &mut DVector<T>) {
        (self.forward)(x, out)
    }

    fn apply_adjoint(&self, z: &DVector<T>, out: &mut DVector<T>) {
        (self.adjoint)(z, out)
    }
}

/// Wraps an operator and counts forward/adjoint applications.
pub struct CountingOperator<T: Scalar> {
    inner: SharedOperator<T>,
    forward: AtomicUsize,
    adjoint: AtomicUsize,
}

impl<T: Scalar> CountingOperator<T> {
    pub fn new(inner: SharedOperator<T>) -> Self {
        Self {
            inner,
            forward: AtomicUsize::new(0),
            adjoint: AtomicUsize::new(0),
        }
    }

    pub fn forward_count(&self) -> usize {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn adjoint_count(&self) -> usize {
        self.adjoint.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.adjoint.store(0, Ordering::Relaxed);
    }
}

impl<T: Scalar> LinearOperator<T> for CountingOperator<T> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &DVector<T>, out: &mut DVector<T>) {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x, out)
    }

    fn apply_adjoint(&self, z: &DVector<T>, out: &mut DVector<T>) {
        self.adjoint.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint(z, out)
    }

    fn as_dense(&self) -> Option<&DMatrix<T>> {
        self.inner.as_dense()
    }
}

/// Materializes any operator column by column (`A e_j`).
pub fn to_dense<T: Scalar>(op: &dyn LinearOperator<T>) -> DMatrix<T> {
    if let Some(d) = op.as_dense() {
        return d.clone();
    }
    let (m, n) = (op.nrows(), op.ncols());
    let mut out = DMatrix::zeros(m, n);
    let mut e = DVector::zeros(n);
    let mut col = DVector::zeros(m);
    for j in 0..n {
        e[j] = T::one();
        op.apply(&e, &mut col);
        out.set_column(j, &col);
        e[j] = T::zero();
    }
    out
}
