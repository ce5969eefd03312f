//! Ball and beam in coordinates where the dynamics read
//!
//! ```text
//! q̇ = ℳ⁻¹(q_u) 𝔭,       ℳ = diag(√(2(ε + q_u²)), 1)
//! 𝔭̇ = f(q, 𝔭) + g(q) + 𝒢u
//! f = (0, q_u 𝔭_a² / (2(ε + q_u²)) − δ𝔭_u),   g = (0, −sin q_a),   𝒢 = (1, 0)
//! ```
//!
//! `q_a` is the beam angle and `q_u` the ball position. With
//! `a = √(2ε + q_u²)` and `b = √(ε + q_u²)` the candidate is
//!
//! ```text
//! ℳ_d⁻¹ = [[a, −b], [−b, a]]          (det = ε)
//! 𝒱_d   = ε√2 (1 − cos q_a) + (K/2)(q_a − asinh(q_u/√(2ε))/√2)²
//! ```
//!
//! and the control is
//! `u = −(a/b) sin q_a + ∇_{q_u}𝒱_d / b − c_a 𝔭_a − c_u 𝔭_u − (δ + K_P a) 𝔭_a + K_P b 𝔭_u`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ConstMatrix, FnMatrix, FnScalar, FnVector};
use crate::linalg;
use crate::lyapunov::{GeneralSecondOrderSystem, LyapunovCandidate};
use crate::sampling::ProbeBox;
use crate::system::{ControlLaw, State, StateMatrixMap, TargetDynamics};
use crate::{Matrix, Vector};

/// Denominator used in the `𝔭_a` term of `c_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuVariant {
    /// `q_u 𝔭_a / (2(ε + q_u²))`. Closes the matching equation.
    #[default]
    Corrected,
    /// `q_u 𝔭_a / (2(ε + q_a²))`, kept for comparison. Leaves a residual
    /// whenever `q_a² ≠ q_u²` and `q_u 𝔭_a 𝔭_u ≠ 0`.
    PrintedQa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallBeamParams {
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub k_p: f64,
    pub cu_variant: CuVariant,
}

impl Default for BallBeamParams {
    fn default() -> Self {
        BallBeamParams {
            eps: 1.0,
            delta: 1.0,
            k: 1.0,
            k_p: 1.0,
            cu_variant: CuVariant::Corrected,
        }
    }
}

/// `(a, b, a', b')` at `q_u`, primes being `d/dq_u`.
fn ab(eps: f64, qu: f64) -> (f64, f64, f64, f64) {
    let a = (2.0 * eps + qu * qu).sqrt();
    let b = (eps + qu * qu).sqrt();
    (a, b, qu / a, qu / b)
}

impl BallBeamParams {
    pub fn validate(&self) -> Result<()> {
        let v = [self.eps, self.delta, self.k, self.k_p];
        if v.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "ball-and-beam parameters must be positive, got ε={}, δ={}, K={}, K_P={}",
                self.eps, self.delta, self.k, self.k_p
            )))
        }
    }

    pub fn mass(&self, qu: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[(2.0 * (self.eps + qu * qu)).sqrt(), 0.0, 0.0, 1.0])
    }

    pub fn md_inv(&self, qu: f64) -> Matrix {
        let (a, b, _, _) = ab(self.eps, qu);
        Matrix::from_row_slice(2, 2, &[a, -b, -b, a])
    }

    /// `ℳ_d = (1/ε)[[a, b], [b, a]]`.
    pub fn md(&self, qu: f64) -> Matrix {
        let (a, b, _, _) = ab(self.eps, qu);
        Matrix::from_row_slice(2, 2, &[a, b, b, a]) / self.eps
    }

    fn md_dqu(&self, qu: f64) -> Matrix {
        let (_, _, da, db) = ab(self.eps, qu);
        Matrix::from_row_slice(2, 2, &[da, db, db, da]) / self.eps
    }

    fn shaping_error(&self, q: &Vector) -> f64 {
        q[0] - (q[1] / (2.0 * self.eps).sqrt()).asinh() / std::f64::consts::SQRT_2
    }

    pub fn vd(&self, q: &Vector) -> f64 {
        let r = self.shaping_error(q);
        self.eps * std::f64::consts::SQRT_2 * (1.0 - q[0].cos()) + 0.5 * self.k * r * r
    }

    pub fn vd_gradient(&self, q: &Vector) -> Vector {
        let r = self.shaping_error(q);
        let (a, _, _, _) = ab(self.eps, q[1]);
        Vector::from_vec(vec![
            self.eps * std::f64::consts::SQRT_2 * q[0].sin() + self.k * r,
            -self.k * r / (std::f64::consts::SQRT_2 * a),
        ])
    }

    pub fn c_a(&self, x: &State) -> f64 {
        let (a, b, _, _) = ab(self.eps, x.q[1]);
        -x.q[1] * x.p[0] / (2.0 * a * b)
    }

    pub fn c_u(&self, x: &State) -> f64 {
        let (qa, qu) = (x.q[0], x.q[1]);
        let (a, b, _, _) = ab(self.eps, qu);
        let sq = match self.cu_variant {
            CuVariant::Corrected => qu * qu,
            CuVariant::PrintedQa => qa * qa,
        };
        -qu * x.p[1] / (2.0 * a * b) + qu * x.p[0] / (2.0 * (self.eps + sq))
    }

    pub fn control(&self, x: &State) -> f64 {
        let (qa, qu) = (x.q[0], x.q[1]);
        let (a, b, _, _) = ab(self.eps, qu);
        let (pa, pu) = (x.p[0], x.p[1]);
        -(a / b) * qa.sin() + self.vd_gradient(&x.q)[1] / b - self.c_a(x) * pa - self.c_u(x) * pu
            - (self.delta + self.k_p * a) * pa
            + self.k_p * b * pu
    }

    /// Skew bracket `S` of the force matrix.
    fn skew_bracket(&self, x: &State) -> Matrix {
        let qu = x.q[1];
        let (a, b, _, _) = ab(self.eps, qu);
        let s12 = -qu * x.p[1] / b + a * qu * x.p[0] / (self.eps + qu * qu);
        Matrix::from_row_slice(2, 2, &[0.0, s12, -s12, 0.0])
    }

    /// `[[a + εK_P/δ, b], [b, a]]`.
    pub fn pd_bracket(&self, qu: f64) -> Matrix {
        let (a, b, _, _) = ab(self.eps, qu);
        Matrix::from_row_slice(2, 2, &[a + self.eps * self.k_p / self.delta, b, b, a])
    }

    /// `Λ = −½ ℳ_d S ℳ_d − (δ/ε)[[a + εK_P/δ, b], [b, a]]`.
    pub fn lambda(&self, x: &State) -> Matrix {
        let md = self.md(x.q[1]);
        -(&md * self.skew_bracket(x) * &md) * 0.5 - self.pd_bracket(x.q[1]) * (self.delta / self.eps)
    }

    /// `|q_a|, |q_u|, |𝔭| ≤ 1`.
    pub fn probe_box() -> ProbeBox {
        ProbeBox::symmetric(&[1.0, 1.0], &[1.0, 1.0])
    }
}

/// Split of `Λ` into a skew part and a negative definite damping part.
#[derive(Debug, Clone, PartialEq)]
pub struct PdDecomposition {
    /// `−½ ℳ_d S ℳ_d`, skew-symmetric.
    pub skew: Matrix,
    /// `−(δ/ε) · bracket`.
    pub damping: Matrix,
    pub bracket: Matrix,
    pub min_eig: f64,
    pub pd: bool,
    /// `det[[a, b], [b, a]]`, which equals `ε`.
    pub det_first: f64,
}

pub fn pd_decomposition(p: &BallBeamParams, x: &State) -> PdDecomposition {
    let qu = x.q[1];
    let md = p.md(qu);
    let skew = -(&md * p.skew_bracket(x) * &md) * 0.5;
    let bracket = p.pd_bracket(qu);
    let min_eig = linalg::min_eigenvalue(&bracket);
    let (a, b, _, _) = ab(p.eps, qu);
    PdDecomposition {
        skew,
        damping: &bracket * (-p.delta / p.eps),
        bracket,
        min_eig,
        pd: min_eig > 0.0,
        det_first: a * a - b * b,
    }
}

#[derive(Clone)]
pub struct BallBeam {
    pub params: BallBeamParams,
    pub system: GeneralSecondOrderSystem,
    pub candidate: LyapunovCandidate,
    pub control: ControlLaw,
    pub lambda: StateMatrixMap,
}

impl BallBeam {
    pub fn target(&self) -> TargetDynamics {
        self.candidate.with_lambda(self.lambda.clone())
    }
}

pub fn build(p: BallBeamParams) -> Result<BallBeam> {
    p.validate()?;
    let eps = p.eps;
    let mass = FnMatrix::new(
        2,
        (2, 2),
        move |q| p.mass(q[1]),
        move |q, i| {
            let mut d = Matrix::zeros(2, 2);
            if i == 1 {
                let qu = q[1];
                d[(0, 0)] = std::f64::consts::SQRT_2 * qu / (eps + qu * qu).sqrt();
            }
            d
        },
    )
    .shared();
    let g_vec = FnVector::new(
        2,
        2,
        |q| Vector::from_vec(vec![0.0, -q[0].sin()]),
        |q| Matrix::from_row_slice(2, 2, &[0.0, 0.0, -q[0].cos(), 0.0]),
    )
    .shared();
    let delta = p.delta;
    let f_vec = Arc::new(move |x: &State| {
        let qu = x.q[1];
        Vector::from_vec(vec![
            0.0,
            qu * x.p[0] * x.p[0] / (2.0 * (eps + qu * qu)) - delta * x.p[1],
        ])
    });
    let input_map = ConstMatrix::new(2, Matrix::from_column_slice(2, 1, &[1.0, 0.0])).shared();
    let system = GeneralSecondOrderSystem::new(mass, g_vec, f_vec, input_map)?;

    let md = FnMatrix::new(
        2,
        (2, 2),
        move |q| p.md(q[1]),
        move |q, i| if i == 1 { p.md_dqu(q[1]) } else { Matrix::zeros(2, 2) },
    )
    .shared();
    let vd = FnScalar::new(2, move |q| p.vd(q), move |q| p.vd_gradient(q)).shared();
    let candidate = LyapunovCandidate {
        md,
        vd,
        q_star: Vector::zeros(2),
    };
    let control: ControlLaw = Arc::new(move |x: &State| Ok(Vector::from_element(1, p.control(x))));
    let lambda: StateMatrixMap = Arc::new(move |x: &State| Ok(p.lambda(x)));
    Ok(BallBeam {
        params: p,
        system,
        candidate,
        control,
        lambda,
    })
}
