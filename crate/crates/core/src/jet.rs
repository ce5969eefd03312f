//! First-order forward-mode jets over matrices.
//!
//! A [`Jet`] carries a matrix value together with its partial derivatives
//! with respect to each configuration coordinate. Products, sums, transposes
//! and inverses propagate the partials exactly, which lets composite
//! expressions such as `m_au m_uu⁻¹ p_u` be differentiated analytically
//! from the partials of their factors.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::field::MatrixField;
use crate::linalg;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: Matrix,
    pub partials: Vec<Matrix>,
}

impl Jet {
    /// Constant jet: all partials zero.
    pub fn constant(value: Matrix, dim: usize) -> Self {
        let zero = Matrix::zeros(value.nrows(), value.ncols());
        Jet {
            value,
            partials: vec![zero; dim],
        }
    }

    pub fn from_field(field: &dyn MatrixField, q: &Vector) -> Self {
        Jet {
            value: field.value(q),
            partials: field.partials(q),
        }
    }

    /// Column vector treated as a constant.
    pub fn constant_vector(v: &Vector, dim: usize) -> Self {
        Jet::constant(Matrix::from_column_slice(v.len(), 1, v.as_slice()), dim)
    }

    pub fn dim(&self) -> usize {
        self.partials.len()
    }

    pub fn transpose(&self) -> Self {
        Jet {
            value: self.value.transpose(),
            partials: self.partials.iter().map(|d| d.transpose()).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Jet {
            value: &self.value * s,
            partials: self.partials.iter().map(|d| d * s).collect(),
        }
    }

    /// `∂ᵢ(A⁻¹) = −A⁻¹ (∂ᵢA) A⁻¹`.
    pub fn inverse(&self) -> Result<Self> {
        let inv = linalg::inverse(&self.value).ok_or(Error::Singular {
            what: "jet value",
            q: vec![],
        })?;
        let partials = self.partials.iter().map(|d| -(&inv * d * &inv)).collect();
        Ok(Jet {
            value: inv,
            partials,
        })
    }

    /// Jacobian of a column jet `v(q)`: entry `(r, i) = ∂ᵢ v_r`.
    pub fn jacobian(&self) -> Matrix {
        assert_eq!(self.value.ncols(), 1, "jacobian of a non-column jet");
        let rows = self.value.nrows();
        let mut j = Matrix::zeros(rows, self.dim());
        for (i, d) in self.partials.iter().enumerate() {
            j.column_mut(i).copy_from(&d.column(0));
        }
        j
    }

    /// Restrict derivatives to the coordinate block `offset..offset + len`.
    pub fn restrict(&self, offset: usize, len: usize) -> Self {
        Jet {
            value: self.value.clone(),
            partials: self.partials[offset..offset + len].to_vec(),
        }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        assert_eq!(self.dim(), rhs.dim(), "jet dimension mismatch");
        let partials = self
            .partials
            .iter()
            .zip(&rhs.partials)
            .map(|(da, db)| da * &rhs.value + &self.value * db)
            .collect();
        Jet {
            value: &self.value * &rhs.value,
            partials,
        }
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        Jet {
            value: &self.value + &rhs.value,
            partials: self
                .partials
                .iter()
                .zip(&rhs.partials)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self + &(-rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnMatrix;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn product_rule_matches_finite_difference() {
        let a = FnMatrix::new(
            2,
            (2, 2),
            |q| dmatrix![q[0].cos(), q[1]; q[0] * q[1], 2.0],
            |q, i| match i {
                0 => dmatrix![-q[0].sin(), 0.0; q[1], 0.0],
                _ => dmatrix![0.0, 1.0; q[0], 0.0],
            },
        );
        let q = dvector![0.4, -1.2];
        let ja = Jet::from_field(&a, &q);
        let prod = &(&ja * &ja.inverse().unwrap().transpose()) * &ja;
        let h = 1e-6;
        for i in 0..2 {
            let eval = |x: &Vector| {
                let m = a.value(x);
                &m * m.clone().try_inverse().unwrap().transpose() * &m
            };
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            let fd = (eval(&qp) - eval(&qm)) / (2.0 * h);
            assert!((&prod.partials[i] - fd).abs().max() < 1e-7);
        }
    }
}
