//! Three-degree-of-freedom test plant with one input.
//!
//! `M(q)`, `M_d(q)` and the skew matrices `Uᵢ(q)` all vary with the
//! configuration, so every term of the kinetic-energy equations is active.
//! Nothing here is tuned to satisfy matching; it is a test bed for identities
//! that must hold for arbitrary data.

use crate::error::Result;
use crate::field::{ConstMatrix, FnMatrix, FnScalar, SharedMatrix};
use crate::matching::GyroscopicSpec;
use crate::system::{MechanicalSystem, State, TargetDynamics};
use crate::{Matrix, Vector};
use std::sync::Arc;

fn sym3(d: [f64; 3], o: [f64; 3]) -> Matrix {
    Matrix::from_row_slice(3, 3, &[d[0], o[0], o[1], o[0], d[1], o[2], o[1], o[2], d[2]])
}

/// `M = sym(diag(3 + cos q₂, 2 + ½ sin² q₁, 2.5 + 0.2 q₃²), offdiag(0.4 sin q₁, 0.3 cos q₃, 0.2 q₂))`.
pub fn inertia() -> SharedMatrix {
    FnMatrix::new(
        3,
        (3, 3),
        |q| {
            sym3(
                [3.0 + q[1].cos(), 2.0 + 0.5 * q[0].sin().powi(2), 2.5 + 0.2 * q[2] * q[2]],
                [0.4 * q[0].sin(), 0.3 * q[2].cos(), 0.2 * q[1]],
            )
        },
        |q, i| match i {
            0 => sym3([0.0, (2.0 * q[0]).sin() * 0.5, 0.0], [0.4 * q[0].cos(), 0.0, 0.0]),
            1 => sym3([-q[1].sin(), 0.0, 0.0], [0.0, 0.0, 0.2]),
            _ => sym3([0.0, 0.0, 0.4 * q[2]], [0.0, -0.3 * q[2].sin(), 0.0]),
        },
    )
    .shared()
}

/// `M_d = sym(diag(4 + 0.5 q₃², 3 − sin q₁, 2 + cos² q₂), offdiag(0.5 cos q₂, −0.3 q₁, 0.25 sin q₃))`.
pub fn target_inertia() -> SharedMatrix {
    FnMatrix::new(
        3,
        (3, 3),
        |q| {
            sym3(
                [4.0 + 0.5 * q[2] * q[2], 3.0 - q[0].sin(), 2.0 + q[1].cos().powi(2)],
                [0.5 * q[1].cos(), -0.3 * q[0], 0.25 * q[2].sin()],
            )
        },
        |q, i| match i {
            0 => sym3([0.0, -q[0].cos(), 0.0], [0.0, -0.3, 0.0]),
            1 => sym3([0.0, 0.0, -(2.0 * q[1]).sin()], [-0.5 * q[1].sin(), 0.0, 0.0]),
            _ => sym3([q[2], 0.0, 0.0], [0.0, 0.0, 0.25 * q[2].cos()]),
        },
    )
    .shared()
}

fn skew3(a: f64, b: f64, c: f64) -> Matrix {
    Matrix::from_row_slice(3, 3, &[0.0, a, b, -a, 0.0, c, -b, -c, 0.0])
}

/// `U₁ = skew(q₂, 0.5, sin q₁)`, `U₂ = skew(cos q₃, q₁q₂, −1)`, `U₃ = skew(0.3, sin q₂, q₃)`.
pub fn gyroscopic() -> GyroscopicSpec {
    let u1 = FnMatrix::new(
        3,
        (3, 3),
        |q| skew3(q[1], 0.5, q[0].sin()),
        |q, i| match i {
            0 => skew3(0.0, 0.0, q[0].cos()),
            1 => skew3(1.0, 0.0, 0.0),
            _ => Matrix::zeros(3, 3),
        },
    )
    .shared();
    let u2 = FnMatrix::new(
        3,
        (3, 3),
        |q| skew3(q[2].cos(), q[0] * q[1], -1.0),
        |q, i| match i {
            0 => skew3(0.0, q[1], 0.0),
            1 => skew3(0.0, q[0], 0.0),
            _ => skew3(-q[2].sin(), 0.0, 0.0),
        },
    )
    .shared();
    let u3 = FnMatrix::new(
        3,
        (3, 3),
        |q| skew3(0.3, q[1].sin(), q[2]),
        |q, i| match i {
            1 => skew3(0.0, q[1].cos(), 0.0),
            2 => skew3(0.0, 0.0, 1.0),
            _ => Matrix::zeros(3, 3),
        },
    )
    .shared();
    GyroscopicSpec { u_mats: vec![u1, u2, u3] }
}

/// Plant with `G = (1, 0, 0)` (two unactuated directions) and
/// `V = 1 − cos q₁ + ½(q₂² + q₃²)`.
pub fn plant() -> Result<MechanicalSystem> {
    let v = FnScalar::new(
        3,
        |q| 1.0 - q[0].cos() + 0.5 * (q[1] * q[1] + q[2] * q[2]),
        |q| Vector::from_vec(vec![q[0].sin(), q[1], q[2]]),
    )
    .shared();
    let g = ConstMatrix::new(3, Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).shared();
    MechanicalSystem::new(inertia(), v, g)
}

/// Target with `V_d = ½|q|²` and zero force matrix.
pub fn target() -> TargetDynamics {
    TargetDynamics {
        md: target_inertia(),
        vd: FnScalar::new(3, |q| 0.5 * q.norm_squared(), |q| q.clone()).shared(),
        lambda: Arc::new(|_: &State| Ok(Matrix::zeros(3, 3))),
        q_star: Vector::zeros(3),
    }
}
