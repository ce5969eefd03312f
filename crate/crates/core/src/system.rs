//! Open-loop mechanical plants and desired closed-loop dynamics.
//!
//! A [`MechanicalSystem`] is the port-Hamiltonian plant
//!
//! ```text
//! q̇ = M⁻¹(q) p,    ṗ = −∇_q H(q, p) + G(q) u,    H = ½ pᵀ M⁻¹ p + V(q)
//! ```
//!
//! and a [`TargetDynamics`] the desired closed loop
//!
//! ```text
//! q̇ = M⁻¹ M_d ∇_p H_d,    ṗ = −M_d M⁻¹ ∇_q H_d + Λ(q, p) M_d⁻¹ p,
//! H_d = ½ pᵀ M_d⁻¹ p + V_d(q).
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::field::{MatrixField, SharedMatrix, SharedScalar};
use crate::linalg;
use crate::{Matrix, Vector};

/// Generalized position and momentum. Also used for their time derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vector,
    pub p: Vector,
}

impl State {
    pub fn new(q: Vector, p: Vector) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        State { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        State::new(Vector::from_column_slice(q), Vector::from_column_slice(p))
    }

    pub fn zeros(n: usize) -> Self {
        State::new(Vector::zeros(n), Vector::zeros(n))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// `[q; p]`.
    pub fn to_flat(&self) -> Vector {
        let n = self.dof();
        let mut v = Vector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.q);
        v.rows_mut(n, n).copy_from(&self.p);
        v
    }

    pub fn from_flat(v: &Vector) -> Self {
        let n = v.len() / 2;
        State::new(v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }
}

/// State-feedback law `u(q, p)`.
pub type ControlLaw = Arc<dyn Fn(&State) -> Result<Vector> + Send + Sync>;
/// State-dependent `n×n` matrix such as `Λ(q, p)` or `J₂(q, p)`.
pub type StateMatrixMap = Arc<dyn Fn(&State) -> Result<Matrix> + Send + Sync>;

/// `i`-th entry is `pᵀ (∂ᵢA) p`, i.e. `∇_q(pᵀ A p)` given the partials of `A`.
pub fn quadratic_form_gradient(partials: &[Matrix], p: &Vector) -> Vector {
    Vector::from_iterator(partials.len(), partials.iter().map(|d| p.dot(&(d * p))))
}

/// Jacobian `∇_q[A(q) p]` at frozen `p`; column `i` is `(∂ᵢA) p`.
pub fn matvec_jacobian(partials: &[Matrix], p: &Vector) -> Matrix {
    let rows = partials.first().map_or(p.len(), |d| d.nrows());
    let mut j = Matrix::zeros(rows, partials.len());
    for (i, d) in partials.iter().enumerate() {
        j.column_mut(i).copy_from(&(d * p));
    }
    j
}

/// Partials of `A⁻¹` from those of `A`: `∂ᵢA⁻¹ = −A⁻¹ (∂ᵢA) A⁻¹`.
pub fn inverse_partials(inv: &Matrix, partials: &[Matrix]) -> Vec<Matrix> {
    partials.iter().map(|d| -(inv * d * inv)).collect()
}

/// Second-order plant `q̇ = M⁻¹p`, `ṗ = drift(q, p) + G(q) u`.
///
/// Implemented both by port-Hamiltonian plants (drift `−∇_q H`) and by the
/// general second-order systems of [`crate::lyapunov`].
pub trait SecondOrderPlant: Send + Sync {
    fn dof(&self) -> usize;
    fn inputs(&self) -> usize;
    fn inertia_field(&self) -> &dyn MatrixField;
    fn input_matrix(&self, q: &Vector) -> Matrix;
    /// Momentum rate with zero input.
    fn drift(&self, x: &State) -> Result<Vector>;

    fn inertia_inv(&self, q: &Vector) -> Result<Matrix> {
        linalg::inverse_at(&self.inertia_field().value(q), "inertia M", q)
    }

    /// `(M⁻¹p, drift + G u)`.
    fn rate(&self, x: &State, u: &Vector) -> Result<State> {
        if u.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "control has {} entries, plant has {} inputs",
                u.len(),
                self.inputs()
            )));
        }
        let qdot = self.inertia_inv(&x.q)? * &x.p;
        let pdot = self.drift(x)? + self.input_matrix(&x.q) * u;
        Ok(State::new(qdot, pdot))
    }
}

/// Open-loop port-Hamiltonian mechanical system.
#[derive(Clone)]
pub struct MechanicalSystem {
    pub n: usize,
    pub m: usize,
    pub inertia: SharedMatrix,
    pub potential: SharedScalar,
    pub input_map: SharedMatrix,
    /// Analytic left annihilator of the input map. When absent, one is
    /// computed pointwise with [`linalg::left_annihilator`].
    pub annihilator: Option<SharedMatrix>,
}

impl MechanicalSystem {
    pub fn new(inertia: SharedMatrix, potential: SharedScalar, input_map: SharedMatrix) -> Result<Self> {
        let n = inertia.dim();
        let (gr, m) = input_map.shape();
        if inertia.shape() != (n, n) || potential.dim() != n || input_map.dim() != n || gr != n {
            return Err(Error::Dimension(format!(
                "inertia {:?} over {} coords, potential over {}, input map {:?} over {}",
                inertia.shape(),
                n,
                potential.dim(),
                input_map.shape(),
                input_map.dim()
            )));
        }
        Ok(MechanicalSystem {
            n,
            m,
            inertia,
            potential,
            input_map,
            annihilator: None,
        })
    }

    pub fn with_annihilator(mut self, annihilator: SharedMatrix) -> Result<Self> {
        if annihilator.shape() != (self.n - self.m, self.n) {
            return Err(Error::Dimension(format!(
                "annihilator shape {:?}, expected ({}, {})",
                annihilator.shape(),
                self.n - self.m,
                self.n
            )));
        }
        self.annihilator = Some(annihilator);
        Ok(self)
    }

    /// Number of unactuated directions `s = n − m`.
    pub fn s(&self) -> usize {
        self.n - self.m
    }

    pub fn inertia_inv_partials(&self, q: &Vector) -> Result<(Matrix, Vec<Matrix>)> {
        let inv = SecondOrderPlant::inertia_inv(self, q)?;
        let parts = inverse_partials(&inv, &self.inertia.partials(q));
        Ok((inv, parts))
    }

    pub fn hamiltonian(&self, x: &State) -> Result<f64> {
        let inv = SecondOrderPlant::inertia_inv(self, &x.q)?;
        Ok(0.5 * x.p.dot(&(inv * &x.p)) + self.potential.value(&x.q))
    }

    /// `∇_q H = ½ Σᵢ eᵢ pᵀ(∂ᵢM⁻¹)p + ∇V`.
    pub fn grad_q_hamiltonian(&self, x: &State) -> Result<Vector> {
        let (_, parts) = self.inertia_inv_partials(&x.q)?;
        Ok(quadratic_form_gradient(&parts, &x.p) * 0.5 + self.potential.gradient(&x.q))
    }

    pub fn annihilator_at(&self, q: &Vector) -> Result<Matrix> {
        match &self.annihilator {
            Some(a) => Ok(a.value(q)),
            None => linalg::left_annihilator(&self.input_map.value(q)),
        }
    }

    /// Checks the structural invariants at the given probes: `M` symmetric
    /// positive definite, `rank G = m`, and a full-rank annihilator with
    /// `G^⊥G = 0`.
    pub fn validate(&self, probes: &[Vector]) -> Result<()> {
        for q in probes {
            let mm = self.inertia.value(q);
            if !linalg::is_positive_definite(&mm) {
                return Err(Error::InvalidArgument(format!(
                    "inertia not symmetric positive definite at {:?} (min eigenvalue {:e})",
                    q.as_slice(),
                    linalg::min_eigenvalue(&mm)
                )));
            }
            let g = self.input_map.value(q);
            let r = linalg::rank(&g);
            if r != self.m {
                return Err(Error::RankDeficient {
                    rows: self.n,
                    cols: self.m,
                    rank: r,
                    expected: self.m,
                });
            }
            let a = self.annihilator_at(q)?;
            let defect = linalg::max_abs(&(&a * &g));
            if defect > 1e-12 * (1.0 + linalg::max_abs(&g)) * (1.0 + linalg::max_abs(&a)) {
                return Err(Error::InvalidArgument(format!(
                    "annihilator defect {defect:e} at {:?}",
                    q.as_slice()
                )));
            }
            if linalg::rank(&a) != self.s() {
                return Err(Error::RankDeficient {
                    rows: self.s(),
                    cols: self.n,
                    rank: linalg::rank(&a),
                    expected: self.s(),
                });
            }
        }
        Ok(())
    }
}

impl SecondOrderPlant for MechanicalSystem {
    fn dof(&self) -> usize {
        self.n
    }
    fn inputs(&self) -> usize {
        self.m
    }
    fn inertia_field(&self) -> &dyn MatrixField {
        self.inertia.as_ref()
    }
    fn input_matrix(&self, q: &Vector) -> Matrix {
        self.input_map.value(q)
    }
    fn drift(&self, x: &State) -> Result<Vector> {
        Ok(-self.grad_q_hamiltonian(x)?)
    }
}

/// Right-hand side of the open-loop pH system for a given input.
pub fn open_loop_field(sys: &MechanicalSystem, x: &State, u: &Vector) -> Result<State> {
    check_dims(sys.n, x)?;
    sys.rate(x, u)
}

fn check_dims(n: usize, x: &State) -> Result<()> {
    if x.q.len() != n || x.p.len() != n {
        return Err(Error::Dimension(format!(
            "state has dimension ({}, {}), system has {} dof",
            x.q.len(),
            x.p.len(),
            n
        )));
    }
    Ok(())
}

/// Desired closed loop: `M_d`, `V_d`, the force matrix `Λ(q, p)` and the
/// target equilibrium.
#[derive(Clone)]
pub struct TargetDynamics {
    pub md: SharedMatrix,
    pub vd: SharedScalar,
    pub lambda: StateMatrixMap,
    pub q_star: Vector,
}

impl TargetDynamics {
    /// `M_d⁻¹`, read directly when `md` was built as an [`InverseField`](crate::field::InverseField).
    pub fn md_inv(&self, q: &Vector) -> Result<Matrix> {
        match self.md.inverse_field() {
            Some(inv) => Ok(inv.value(q)),
            None => linalg::inverse_at(&self.md.value(q), "target inertia M_d", q),
        }
    }

    pub fn md_inv_partials(&self, q: &Vector) -> Result<(Matrix, Vec<Matrix>)> {
        if let Some(inv) = self.md.inverse_field() {
            return Ok((inv.value(q), inv.partials(q)));
        }
        let inv = self.md_inv(q)?;
        let parts = inverse_partials(&inv, &self.md.partials(q));
        Ok((inv, parts))
    }

    /// `H_d = ½ pᵀ M_d⁻¹ p + V_d`.
    pub fn hd(&self, x: &State) -> Result<f64> {
        Ok(0.5 * x.p.dot(&(self.md_inv(&x.q)? * &x.p)) + self.vd.value(&x.q))
    }

    pub fn grad_q_hd(&self, x: &State) -> Result<Vector> {
        let (_, parts) = self.md_inv_partials(&x.q)?;
        Ok(quadratic_form_gradient(&parts, &x.p) * 0.5 + self.vd.gradient(&x.q))
    }

    /// `∇_p H_d = M_d⁻¹ p`.
    pub fn grad_p_hd(&self, x: &State) -> Result<Vector> {
        Ok(self.md_inv(&x.q)? * &x.p)
    }

    /// Checks `M_d ≻ 0` at the probes and that `q_star` is a strict local
    /// minimum of `V_d` over the coordinates in `checked` (all when `None`):
    /// `|∇V_d(q*)| ≤ 1e-10` and a positive definite finite-difference Hessian.
    pub fn validate(&self, probes: &[Vector], checked: Option<&[usize]>) -> Result<()> {
        for q in probes {
            let md = self.md.value(q);
            if !linalg::is_positive_definite(&md) {
                return Err(Error::InvalidArgument(format!(
                    "M_d not positive definite at {:?}",
                    q.as_slice()
                )));
            }
        }
        vd_minimum(self.vd.as_ref(), &self.q_star, checked).map(|_| ())
    }
}

/// Gradient norm and minimum Hessian eigenvalue of `V_d` at `q_star`,
/// restricted to `checked` coordinates (all when `None`).
pub fn vd_minimum_stats(
    vd: &dyn crate::field::ScalarField,
    q_star: &Vector,
    checked: Option<&[usize]>,
) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..q_star.len()).collect();
    let idx = checked.unwrap_or(&all);
    let grad = vd.gradient(q_star);
    let gnorm = idx.iter().fold(0.0f64, |m, &i| m.max(grad[i].abs()));
    let hess = fd::fd_hessian(vd, q_star)?;
    let sub = Matrix::from_fn(idx.len(), idx.len(), |r, c| hess[(idx[r], idx[c])]);
    Ok((gnorm, linalg::min_eigenvalue(&sub)))
}

/// As [`vd_minimum_stats`], but errors when `q_star` is not a strict local
/// minimum (`|∇V_d| > 1e-10` or a Hessian that is not positive definite).
pub fn vd_minimum(
    vd: &dyn crate::field::ScalarField,
    q_star: &Vector,
    checked: Option<&[usize]>,
) -> Result<(f64, f64)> {
    let (gnorm, min_eig) = vd_minimum_stats(vd, q_star, checked)?;
    if gnorm > VD_GRADIENT_TOL || !(min_eig > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "q* = {:?} is not a strict minimum of V_d (|∇V_d| = {gnorm:e}, min Hessian eigenvalue {min_eig:e})",
            q_star.as_slice()
        )));
    }
    Ok((gnorm, min_eig))
}

/// Gradient tolerance at a claimed minimum of `V_d`.
pub const VD_GRADIENT_TOL: f64 = 1e-10;

/// Right-hand side of the target dynamics:
/// `q̇ = M⁻¹p`, `ṗ = −M_d M⁻¹ ∇_q H_d + Λ M_d⁻¹ p`.
pub fn target_field(plant: &dyn SecondOrderPlant, tgt: &TargetDynamics, x: &State) -> Result<State> {
    check_dims(plant.dof(), x)?;
    let m_inv = plant.inertia_inv(&x.q)?;
    let md = tgt.md.value(&x.q);
    let md_inv = tgt.md_inv(&x.q)?;
    let lambda = (tgt.lambda)(x)?;
    let qdot = &m_inv * &x.p;
    let pdot = -(&md * &m_inv * tgt.grad_q_hd(x)?) + lambda * (md_inv * &x.p);
    Ok(State::new(qdot, pdot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstMatrix, QuadraticScalar};
    use nalgebra::{dmatrix, dvector};

    fn oscillator() -> (MechanicalSystem, TargetDynamics) {
        let m = ConstMatrix::new(2, dmatrix![2.0, 0.0; 0.0, 1.0]).shared();
        let v = Arc::new(QuadraticScalar {
            weight: dmatrix![1.0, 0.0; 0.0, 3.0],
            center: dvector![0.0, 0.0],
        });
        let g = ConstMatrix::new(2, dmatrix![1.0; 0.0]).shared();
        let sys = MechanicalSystem::new(m.clone(), v.clone(), g).unwrap();
        let tgt = TargetDynamics {
            md: m,
            vd: v,
            lambda: Arc::new(|_| Ok(Matrix::zeros(2, 2))),
            q_star: dvector![0.0, 0.0],
        };
        (sys, tgt)
    }

    #[test]
    fn zero_momentum_gives_potential_force() {
        let (sys, _) = oscillator();
        let x = State::from_slices(&[0.5, -1.0], &[0.0, 0.0]);
        let r = open_loop_field(&sys, &x, &dvector![0.0]).unwrap();
        assert_eq!(r.q, dvector![0.0, 0.0]);
        assert_eq!(r.p, dvector![-0.5, 3.0]);
    }

    #[test]
    fn target_equilibrium_and_linear_oscillator() {
        let (sys, tgt) = oscillator();
        let r = target_field(&sys, &tgt, &State::zeros(2)).unwrap();
        assert_eq!(r, State::zeros(2));
        let x = State::from_slices(&[0.5, -1.0], &[0.4, 0.2]);
        let r = target_field(&sys, &tgt, &x).unwrap();
        assert!((r.q - dvector![0.2, 0.2]).norm() < 1e-15);
        assert!((r.p - dvector![-0.5, 3.0]).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (sys, _) = oscillator();
        let x = State::zeros(3);
        assert!(matches!(
            open_loop_field(&sys, &x, &dvector![0.0]),
            Err(Error::Dimension(_))
        ));
        let x = State::zeros(2);
        assert!(open_loop_field(&sys, &x, &dvector![0.0, 1.0]).is_err());
    }

    #[test]
    fn singular_inertia_is_reported() {
        let m = ConstMatrix::new(1, dmatrix![0.0]).shared();
        let v = Arc::new(crate::field::ZeroScalar(1));
        let g = ConstMatrix::new(1, dmatrix![1.0]).shared();
        let sys = MechanicalSystem::new(m, v, g).unwrap();
        let err = open_loop_field(&sys, &State::zeros(1), &dvector![0.0]).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn flat_round_trip() {
        let x = State::from_slices(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(State::from_flat(&x.to_flat()), x);
    }
}
