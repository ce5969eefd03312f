//! Configuration-dependent scalars, vectors and matrices with analytic
//! derivatives.
//!
//! Every field carries its own derivative. Finite differences (see [`crate::fd`])
//! are used only to check these derivatives, never to produce them: the
//! matching residuals are asserted far below finite-difference noise.

use std::sync::Arc;

use crate::{Matrix, Vector};

/// Scalar function of the configuration `q` with an analytic gradient.
pub trait ScalarField: Send + Sync {
    /// Number of coordinates the field is defined over.
    fn dim(&self) -> usize;
    fn value(&self, q: &Vector) -> f64;
    fn gradient(&self, q: &Vector) -> Vector;
}

/// Vector-valued function of `q` with an analytic Jacobian (rows are
/// components, columns are coordinates).
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn value(&self, q: &Vector) -> Vector;
    fn jacobian(&self, q: &Vector) -> Matrix;
}

/// Matrix-valued function of `q` with analytic partials `∂/∂q_i`.
///
/// The shape is fixed over `q`.
pub trait MatrixField: Send + Sync {
    fn dim(&self) -> usize;
    fn shape(&self) -> (usize, usize);
    fn value(&self, q: &Vector) -> Matrix;
    fn partial(&self, q: &Vector, i: usize) -> Matrix;

    /// All `dim()` partials at `q`.
    fn partials(&self, q: &Vector) -> Vec<Matrix> {
        (0..self.dim()).map(|i| self.partial(q, i)).collect()
    }

    /// A field known to be the inverse of this one, if any. Lets callers
    /// skip a numerical inversion.
    fn inverse_field(&self) -> Option<&dyn MatrixField> {
        None
    }
}

pub type SharedScalar = Arc<dyn ScalarField>;
pub type SharedVector = Arc<dyn VectorField>;
pub type SharedMatrix = Arc<dyn MatrixField>;

type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type MatrixFn = dyn Fn(&Vector) -> Matrix + Send + Sync;
type PartialFn = dyn Fn(&Vector, usize) -> Matrix + Send + Sync;

/// Scalar field assembled from a value closure and a gradient closure.
pub struct FnScalar {
    dim: usize,
    value: Box<ScalarFn>,
    gradient: Box<VectorFn>,
}

impl FnScalar {
    pub fn new(
        dim: usize,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        FnScalar {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }

    pub fn shared(self) -> SharedScalar {
        Arc::new(self)
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &Vector) -> f64 {
        (self.value)(q)
    }
    fn gradient(&self, q: &Vector) -> Vector {
        (self.gradient)(q)
    }
}

/// Vector field assembled from closures.
pub struct FnVector {
    dim: usize,
    len: usize,
    value: Box<VectorFn>,
    jacobian: Box<MatrixFn>,
}

impl FnVector {
    pub fn new(
        dim: usize,
        len: usize,
        value: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jacobian: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        FnVector {
            dim,
            len,
            value: Box::new(value),
            jacobian: Box::new(jacobian),
        }
    }

    pub fn shared(self) -> SharedVector {
        Arc::new(self)
    }
}

impl VectorField for FnVector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.len
    }
    fn value(&self, q: &Vector) -> Vector {
        (self.value)(q)
    }
    fn jacobian(&self, q: &Vector) -> Matrix {
        (self.jacobian)(q)
    }
}

/// Matrix field assembled from a value closure and a partial closure.
pub struct FnMatrix {
    dim: usize,
    shape: (usize, usize),
    value: Box<MatrixFn>,
    partial: Box<PartialFn>,
}

impl FnMatrix {
    pub fn new(
        dim: usize,
        shape: (usize, usize),
        value: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
        partial: impl Fn(&Vector, usize) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        FnMatrix {
            dim,
            shape,
            value: Box::new(value),
            partial: Box::new(partial),
        }
    }

    pub fn shared(self) -> SharedMatrix {
        Arc::new(self)
    }
}

impl MatrixField for FnMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn shape(&self) -> (usize, usize) {
        self.shape
    }
    fn value(&self, q: &Vector) -> Matrix {
        (self.value)(q)
    }
    fn partial(&self, q: &Vector, i: usize) -> Matrix {
        (self.partial)(q, i)
    }
}

/// Constant matrix; all partials vanish.
#[derive(Debug, Clone)]
pub struct ConstMatrix {
    dim: usize,
    value: Matrix,
}

impl ConstMatrix {
    pub fn new(dim: usize, value: Matrix) -> Self {
        ConstMatrix { dim, value }
    }

    pub fn shared(self) -> SharedMatrix {
        Arc::new(self)
    }
}

impl MatrixField for ConstMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
    fn value(&self, _q: &Vector) -> Matrix {
        self.value.clone()
    }
    fn partial(&self, _q: &Vector, _i: usize) -> Matrix {
        Matrix::zeros(self.value.nrows(), self.value.ncols())
    }
}

/// Scalar field that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScalar(pub usize);

impl ScalarField for ZeroScalar {
    fn dim(&self) -> usize {
        self.0
    }
    fn value(&self, _q: &Vector) -> f64 {
        0.0
    }
    fn gradient(&self, _q: &Vector) -> Vector {
        Vector::zeros(self.0)
    }
}

/// Quadratic potential `½ (q − c)ᵀ S (q − c)` with symmetric `S`.
#[derive(Debug, Clone)]
pub struct QuadraticScalar {
    pub weight: Matrix,
    pub center: Vector,
}

impl ScalarField for QuadraticScalar {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, q: &Vector) -> f64 {
        let e = q - &self.center;
        0.5 * e.dot(&(&self.weight * &e))
    }
    fn gradient(&self, q: &Vector) -> Vector {
        &self.weight * (q - &self.center)
    }
}

/// Inverse of a square matrix field, with partials
/// `∂ᵢ(A⁻¹) = −A⁻¹ (∂ᵢA) A⁻¹`.
///
/// Evaluation panics on a singular value; callers that need a recoverable
/// error should invert explicitly with [`crate::linalg::inverse`].
pub struct InverseField {
    inner: SharedMatrix,
}

impl InverseField {
    pub fn new(inner: SharedMatrix) -> Self {
        InverseField { inner }
    }

    pub fn shared(self) -> SharedMatrix {
        Arc::new(self)
    }
}

impl MatrixField for InverseField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }
    fn value(&self, q: &Vector) -> Matrix {
        self.inner
            .value(q)
            .try_inverse()
            .expect("InverseField: singular matrix")
    }
    fn partial(&self, q: &Vector, i: usize) -> Matrix {
        let inv = self.value(q);
        -(&inv * self.inner.partial(q, i) * &inv)
    }
    fn inverse_field(&self) -> Option<&dyn MatrixField> {
        Some(self.inner.as_ref())
    }
}

/// Scalar field over a block of coordinates `offset..offset + inner.dim()`
/// lifted to `dim` coordinates; the other partials are zero.
pub struct EmbeddedScalar {
    inner: SharedScalar,
    offset: usize,
    dim: usize,
}

impl EmbeddedScalar {
    pub fn new(inner: SharedScalar, offset: usize, dim: usize) -> Self {
        assert!(offset + inner.dim() <= dim, "embedding out of range");
        EmbeddedScalar { inner, offset, dim }
    }
}

impl ScalarField for EmbeddedScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, q: &Vector) -> f64 {
        self.inner.value(&slice(q, self.offset, self.inner.dim()))
    }
    fn gradient(&self, q: &Vector) -> Vector {
        let k = self.inner.dim();
        let mut g = Vector::zeros(self.dim);
        g.rows_mut(self.offset, k)
            .copy_from(&self.inner.gradient(&slice(q, self.offset, k)));
        g
    }
}

/// Matrix field lifted from a coordinate block, as [`EmbeddedScalar`].
pub struct EmbeddedMatrix {
    inner: SharedMatrix,
    offset: usize,
    dim: usize,
}

impl EmbeddedMatrix {
    pub fn new(inner: SharedMatrix, offset: usize, dim: usize) -> Self {
        assert!(offset + inner.dim() <= dim, "embedding out of range");
        EmbeddedMatrix { inner, offset, dim }
    }
}

impl MatrixField for EmbeddedMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }
    fn value(&self, q: &Vector) -> Matrix {
        self.inner.value(&slice(q, self.offset, self.inner.dim()))
    }
    fn partial(&self, q: &Vector, i: usize) -> Matrix {
        let k = self.inner.dim();
        if i < self.offset || i >= self.offset + k {
            let (r, c) = self.shape();
            return Matrix::zeros(r, c);
        }
        self.inner.partial(&slice(q, self.offset, k), i - self.offset)
    }
}

pub(crate) fn slice(q: &Vector, offset: usize, len: usize) -> Vector {
    q.rows(offset, len).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn inverse_field_partial_matches_product_rule() {
        let a = FnMatrix::new(
            1,
            (2, 2),
            |q| dmatrix![2.0 + q[0] * q[0], q[0]; q[0], 3.0],
            |q, _| dmatrix![2.0 * q[0], 1.0; 1.0, 0.0],
        )
        .shared();
        let inv = InverseField::new(a.clone());
        let q = dvector![0.7];
        let h = 1e-6;
        let fd = (inv.value(&dvector![0.7 + h]) - inv.value(&dvector![0.7 - h])) / (2.0 * h);
        assert!((inv.partial(&q, 0) - fd).abs().max() < 1e-8);
        assert!((inv.value(&q) * a.value(&q) - Matrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn embedded_fields_zero_outside_block() {
        let s = FnScalar::new(1, |q| q[0].sin(), |q| dvector![q[0].cos()]).shared();
        let e = EmbeddedScalar::new(s, 1, 2);
        let q = dvector![5.0, 0.3];
        assert_eq!(e.value(&q), 0.3f64.sin());
        assert_eq!(e.gradient(&q), dvector![0.0, 0.3f64.cos()]);

        let m = FnMatrix::new(1, (1, 1), |q| dmatrix![q[0].cos()], |q, _| dmatrix![-q[0].sin()])
            .shared();
        let em = EmbeddedMatrix::new(m, 1, 2);
        assert_eq!(em.partial(&q, 0), dmatrix![0.0]);
        assert_eq!(em.partial(&q, 1), dmatrix![-(0.3f64.sin())]);
    }

    #[test]
    fn quadratic_scalar_gradient() {
        let f = QuadraticScalar {
            weight: dmatrix![2.0, 0.5; 0.5, 1.0],
            center: dvector![1.0, -1.0],
        };
        let q = dvector![1.0, -1.0];
        assert_eq!(f.value(&q), 0.0);
        assert_eq!(f.gradient(&q), dvector![0.0, 0.0]);
    }
}
