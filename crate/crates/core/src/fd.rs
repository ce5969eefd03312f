//! Central finite differences, used as an independent oracle for the
//! analytic derivatives carried by every field.

use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, VectorField};
use crate::{Matrix, Vector};

/// Default relative tolerance of the derivative oracle.
pub const ORACLE_RTOL: f64 = 1e-5;

/// Step used by the oracle checks: `1e-6·(1 + |qᵢ|)`.
pub fn scaled_step(qi: f64) -> f64 {
    1e-6 * (1.0 + qi.abs())
}

fn probe_error(q: &Vector) -> Error {
    Error::NonFinite {
        probe: q.iter().copied().collect(),
    }
}

fn checked(v: f64, q: &Vector) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(probe_error(q))
    }
}

/// Central-difference gradient with a uniform step `h`.
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, q: &Vector, h: f64) -> Result<Vector> {
    gradient_with(f, q, |_| h)
}

/// Central-difference gradient with the scaled step of [`scaled_step`].
pub fn fd_gradient_scaled(f: impl Fn(&Vector) -> f64, q: &Vector) -> Result<Vector> {
    gradient_with(f, q, scaled_step)
}

fn gradient_with(
    f: impl Fn(&Vector) -> f64,
    q: &Vector,
    step: impl Fn(f64) -> f64,
) -> Result<Vector> {
    let mut g = Vector::zeros(q.len());
    for i in 0..q.len() {
        let h = step(q[i]);
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        let mut qp = q.clone();
        qp[i] += h;
        let mut qm = q.clone();
        qm[i] -= h;
        let fp = checked(f(&qp), &qp)?;
        let fm = checked(f(&qm), &qm)?;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian with a uniform step; column `i` is the
/// difference along `eᵢ`.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, q: &Vector, h: f64) -> Result<Matrix> {
    jacobian_with(f, q, |_| h)
}

pub fn fd_jacobian_scaled(f: impl Fn(&Vector) -> Vector, q: &Vector) -> Result<Matrix> {
    jacobian_with(f, q, scaled_step)
}

fn jacobian_with(
    f: impl Fn(&Vector) -> Vector,
    q: &Vector,
    step: impl Fn(f64) -> f64,
) -> Result<Matrix> {
    let rows = f(q).len();
    let mut j = Matrix::zeros(rows, q.len());
    for i in 0..q.len() {
        let h = step(q[i]);
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        let mut qp = q.clone();
        qp[i] += h;
        let mut qm = q.clone();
        qm[i] -= h;
        let fp = f(&qp);
        let fm = f(&qm);
        if fp.iter().chain(fm.iter()).any(|x| !x.is_finite()) {
            return Err(probe_error(q));
        }
        j.column_mut(i).copy_from(&((fp - fm) / (2.0 * h)));
    }
    Ok(j)
}

/// Central-difference partial `∂A/∂qᵢ` of a matrix-valued map.
pub fn fd_matrix_partial(
    f: impl Fn(&Vector) -> Matrix,
    q: &Vector,
    i: usize,
    h: f64,
) -> Result<Matrix> {
    let mut qp = q.clone();
    qp[i] += h;
    let mut qm = q.clone();
    qm[i] -= h;
    let d = (f(&qp) - f(&qm)) / (2.0 * h);
    if d.iter().any(|x| !x.is_finite()) {
        return Err(probe_error(q));
    }
    Ok(d)
}

/// Hessian by central differences of an analytic gradient (symmetrized).
pub fn fd_hessian(field: &dyn ScalarField, q: &Vector) -> Result<Matrix> {
    let j = fd_jacobian_scaled(|x| field.gradient(x), q)?;
    Ok((&j + j.transpose()) * 0.5)
}

/// Mixed error used by the oracle: `|a − b| / max(1, |a|)`.
pub fn mixed_error(analytic: f64, approx: f64) -> f64 {
    (analytic - approx).abs() / analytic.abs().max(1.0)
}

/// Outcome of checking analytic derivatives against finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub max_error: f64,
    pub worst_probe: Vec<f64>,
    pub probes: usize,
}

impl DerivativeCheck {
    fn new() -> Self {
        DerivativeCheck {
            max_error: 0.0,
            worst_probe: vec![],
            probes: 0,
        }
    }

    fn record(&mut self, err: f64, q: &Vector) {
        self.probes += 1;
        if err > self.max_error || self.worst_probe.is_empty() {
            self.max_error = self.max_error.max(err);
            self.worst_probe = q.iter().copied().collect();
        }
    }

    pub fn passes(&self, rtol: f64) -> bool {
        self.max_error <= rtol
    }
}

fn worst_entry(analytic: &Matrix, approx: &Matrix) -> f64 {
    analytic
        .iter()
        .zip(approx.iter())
        .fold(0.0, |m, (a, b)| m.max(mixed_error(*a, *b)))
}

pub fn check_scalar_field(field: &dyn ScalarField, probes: &[Vector]) -> Result<DerivativeCheck> {
    let mut out = DerivativeCheck::new();
    for q in probes {
        let fd = fd_gradient_scaled(|x| field.value(x), q)?;
        let an = field.gradient(q);
        let err = an
            .iter()
            .zip(fd.iter())
            .fold(0.0f64, |m, (a, b)| m.max(mixed_error(*a, *b)));
        out.record(err, q);
    }
    Ok(out)
}

pub fn check_vector_field(field: &dyn VectorField, probes: &[Vector]) -> Result<DerivativeCheck> {
    let mut out = DerivativeCheck::new();
    for q in probes {
        let fd = fd_jacobian_scaled(|x| field.value(x), q)?;
        out.record(worst_entry(&field.jacobian(q), &fd), q);
    }
    Ok(out)
}

pub fn check_matrix_field(field: &dyn MatrixField, probes: &[Vector]) -> Result<DerivativeCheck> {
    let mut out = DerivativeCheck::new();
    for q in probes {
        let mut err = 0.0f64;
        for i in 0..field.dim() {
            let fd = fd_matrix_partial(|x| field.value(x), q, i, scaled_step(q[i]))?;
            err = err.max(worst_entry(&field.partial(q, i), &fd));
        }
        out.record(err, q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn gradient_of_square_is_exact() {
        let g = fd_gradient(|q| q[0] * q[0], &dvector![3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = fd_gradient(|_| 4.2, &dvector![1.0, -2.0, 0.5], 1e-4).unwrap();
        assert_eq!(g, Vector::zeros(3));
    }

    #[test]
    fn pendulum_potential_gradient() {
        let (m, g, l) = (0.2, 9.81, 0.5);
        for qu in [-1.0, -0.3, 0.0, 0.7, 2.5] {
            let d = fd_gradient(|q| m * g * l * q[0].cos(), &dvector![qu], 1e-6).unwrap();
            assert!((d[0] + m * g * l * f64::sin(qu)).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_examples() {
        let a = dmatrix![1.0, 2.0; -3.0, 0.5; 4.0, 1.0];
        let j = fd_jacobian(|q| &a * q, &dvector![0.3, -0.1], 1e-4).unwrap();
        assert!((j - &a).abs().max() < 1e-8);

        let j = fd_jacobian(|q| q.clone(), &dvector![1.0, 2.0, 3.0], 1e-4).unwrap();
        assert!((j - Matrix::identity(3, 3)).abs().max() < 1e-8);

        let (m, l) = (0.2, 0.5);
        let qu = 0.45f64;
        let j = fd_jacobian(|q| dvector![m * l * q[0].cos()], &dvector![qu], 1e-6).unwrap();
        assert!((j[(0, 0)] + m * l * qu.sin()).abs() < 1e-8);
    }

    #[test]
    fn non_finite_reports_probe() {
        let err = fd_gradient(|q| (q[0] - 1.0).ln(), &dvector![1.0], 1e-3).unwrap_err();
        match err {
            Error::NonFinite { probe } => assert_eq!(probe.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(fd_gradient(|q| q[0], &dvector![1.0], 0.0).is_err());
    }
}
