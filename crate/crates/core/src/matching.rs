//! Matching equations, evaluated pointwise.
//!
//! Nothing here solves a PDE. Each function evaluates one side-minus-the-other
//! of an identity at a given state, so that sampled sweeps (see
//! [`crate::sampling`]) can certify or refute it.
//!
//! Two families are covered:
//!
//! * gyroscopic targets, where the closed-loop force is `J₂ M_d⁻¹ p` with
//!   `J₂ = Σᵢ (eᵢᵀ M_d⁻¹ p) Uᵢ(q)` skew-symmetric, and
//! * generalized-force targets, where it is `C = Λ M_d⁻¹ p` with
//!   `Λ = ½ Σᵢ eᵢ pᵀ M_d⁻¹ Qᵢ(q)` and `Qᵢ` unconstrained.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{FnMatrix, MatrixField, SharedMatrix};
use crate::linalg;
use crate::system::{
    quadratic_form_gradient, ControlLaw, MechanicalSystem, SecondOrderPlant, State, TargetDynamics,
};
use crate::{Matrix, Vector};

/// Skew-symmetric matrices `Uᵢ(q)`, one per coordinate, defining `J₂`.
#[derive(Clone)]
pub struct GyroscopicSpec {
    pub u_mats: Vec<SharedMatrix>,
}

impl GyroscopicSpec {
    pub fn new(u_mats: Vec<SharedMatrix>) -> Result<Self> {
        check_square_family(&u_mats)?;
        Ok(GyroscopicSpec { u_mats })
    }

    pub fn zero(n: usize) -> Self {
        let z = crate::field::ConstMatrix::new(n, Matrix::zeros(n, n)).shared();
        GyroscopicSpec {
            u_mats: vec![z; n],
        }
    }

    /// Largest skew-symmetry defect `|Uᵢ + Uᵢᵀ|` over the family at `q`.
    pub fn skew_defect(&self, q: &Vector) -> f64 {
        self.u_mats
            .iter()
            .map(|u| linalg::skewness_defect(&u.value(q)))
            .fold(0.0, f64::max)
    }
}

/// Free matrices `Qᵢ(q)` defining the generalized force.
#[derive(Clone)]
pub struct GeneralizedForceSpec {
    pub q_mats: Vec<SharedMatrix>,
}

impl GeneralizedForceSpec {
    pub fn new(q_mats: Vec<SharedMatrix>) -> Result<Self> {
        check_square_family(&q_mats)?;
        Ok(GeneralizedForceSpec { q_mats })
    }

    /// Embeds a gyroscopic spec: `(Q_j)_{il} = 2 (U_i)_{jl}` makes
    /// `Λ M_d⁻¹ p = J₂ M_d⁻¹ p`.
    pub fn from_gyroscopic(spec: &GyroscopicSpec) -> Self {
        let n = spec.u_mats.len();
        let q_mats = (0..n)
            .map(|j| {
                let us = spec.u_mats.clone();
                let us_d = spec.u_mats.clone();
                FnMatrix::new(
                    n,
                    (n, n),
                    move |q| {
                        let vals: Vec<Matrix> = us.iter().map(|u| u.value(q)).collect();
                        Matrix::from_fn(n, n, |i, l| 2.0 * vals[i][(j, l)])
                    },
                    move |q, k| {
                        let vals: Vec<Matrix> = us_d.iter().map(|u| u.partial(q, k)).collect();
                        Matrix::from_fn(n, n, |i, l| 2.0 * vals[i][(j, l)])
                    },
                )
                .shared()
            })
            .collect();
        GeneralizedForceSpec { q_mats }
    }
}

fn check_square_family(mats: &[SharedMatrix]) -> Result<()> {
    let n = mats.len();
    for (i, m) in mats.iter().enumerate() {
        if m.shape() != (n, n) || m.dim() != n {
            return Err(Error::Dimension(format!(
                "matrix {i} has shape {:?} over {} coordinates, expected ({n}, {n}) over {n}",
                m.shape(),
                m.dim()
            )));
        }
    }
    Ok(())
}

fn md_inv_at(md: &dyn MatrixField, q: &Vector) -> Result<Matrix> {
    if let Some(inv) = md.inverse_field() {
        return Ok(inv.value(q));
    }
    linalg::inverse_at(&md.value(q), "target inertia M_d", q)
}

/// `J₂ = Σᵢ (eᵢᵀ M_d⁻¹ p) Uᵢ(q)`.
pub fn build_j2(spec: &GyroscopicSpec, md: &dyn MatrixField, x: &State) -> Result<Matrix> {
    let z = md_inv_at(md, &x.q)? * &x.p;
    let n = x.dof();
    let mut j2 = Matrix::zeros(n, n);
    for (i, u) in spec.u_mats.iter().enumerate() {
        j2 += u.value(&x.q) * z[i];
    }
    Ok(j2)
}

/// `Λ = ½ Σᵢ eᵢ pᵀ M_d⁻¹ Qᵢ`: row `i` is `½ (M_d⁻¹p)ᵀ Qᵢ`.
pub fn build_lambda(spec: &GeneralizedForceSpec, md: &dyn MatrixField, x: &State) -> Result<Matrix> {
    let z = md_inv_at(md, &x.q)? * &x.p;
    let n = x.dof();
    let mut lambda = Matrix::zeros(n, n);
    for (i, qm) in spec.q_mats.iter().enumerate() {
        lambda
            .row_mut(i)
            .copy_from(&((z.transpose() * qm.value(&x.q)) * 0.5));
    }
    Ok(lambda)
}

/// `2C = Σᵢ (pᵀ M_d⁻¹ Qᵢ M_d⁻¹ p) eᵢ`, evaluated directly from the `Qᵢ`.
pub fn generalized_force_twice(
    spec: &GeneralizedForceSpec,
    md: &dyn MatrixField,
    x: &State,
) -> Result<Vector> {
    let z = md_inv_at(md, &x.q)? * &x.p;
    Ok(Vector::from_iterator(
        spec.q_mats.len(),
        spec.q_mats.iter().map(|qm| z.dot(&(qm.value(&x.q) * &z))),
    ))
}

/// Wraps a generalized-force spec as the `Λ` map of a target.
pub fn lambda_map(spec: GeneralizedForceSpec, md: SharedMatrix) -> crate::system::StateMatrixMap {
    Arc::new(move |x: &State| build_lambda(&spec, md.as_ref(), x))
}

/// Common bracket of the kinetic-energy equations without the force term:
/// `∇_q(pᵀM⁻¹p) − M_d M⁻¹ ∇_q(pᵀM_d⁻¹p)`.
fn ke_bracket(sys: &MechanicalSystem, tgt: &TargetDynamics, x: &State) -> Result<Vector> {
    let (m_inv, m_inv_d) = sys.inertia_inv_partials(&x.q)?;
    let (_, md_inv_d) = tgt.md_inv_partials(&x.q)?;
    let md = tgt.md.value(&x.q);
    Ok(quadratic_form_gradient(&m_inv_d, &x.p)
        - md * m_inv * quadratic_form_gradient(&md_inv_d, &x.p))
}

/// Kinetic-energy residual of the gyroscopic design:
/// `G^⊥{∇_q(pᵀM⁻¹p) − M_d M⁻¹ ∇_q(pᵀM_d⁻¹p) + 2 J₂ M_d⁻¹ p}`.
pub fn ida_ke_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    j2spec: &GyroscopicSpec,
    x: &State,
) -> Result<Vector> {
    let j2 = build_j2(j2spec, tgt.md.as_ref(), x)?;
    let z = tgt.md_inv(&x.q)? * &x.p;
    let inner = ke_bracket(sys, tgt, x)? + j2 * z * 2.0;
    Ok(sys.annihilator_at(&x.q)? * inner)
}

/// Kinetic-energy residual with generalized forces, using `2C` from the `Qᵢ`.
pub fn sida_ke_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    gspec: &GeneralizedForceSpec,
    x: &State,
) -> Result<Vector> {
    let two_c = generalized_force_twice(gspec, tgt.md.as_ref(), x)?;
    let inner = ke_bracket(sys, tgt, x)? + two_c;
    Ok(sys.annihilator_at(&x.q)? * inner)
}

/// Potential-energy residual `G^⊥{∇V − M_d M⁻¹ ∇V_d}`.
pub fn pe_residual(sys: &MechanicalSystem, tgt: &TargetDynamics, x: &State) -> Result<Vector> {
    let m_inv = SecondOrderPlant::inertia_inv(sys, &x.q)?;
    let inner = sys.potential.gradient(&x.q) - tgt.md.value(&x.q) * m_inv * tgt.vd.gradient(&x.q);
    Ok(sys.annihilator_at(&x.q)? * inner)
}

/// `(GᵀG)⁻¹Gᵀ[∇_qH − M_d M⁻¹ ∇_qH_d + F]` for a closed-loop force `F`.
fn energy_shaping_control(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    x: &State,
    force: Vector,
) -> Result<Vector> {
    let g = sys.input_map.value(&x.q);
    let pinv = linalg::left_pinv(&g, &x.q)?;
    let m_inv = SecondOrderPlant::inertia_inv(sys, &x.q)?;
    let md = tgt.md.value(&x.q);
    let bracket = sys.grad_q_hamiltonian(x)? - md * m_inv * tgt.grad_q_hd(x)? + force;
    Ok(pinv * bracket)
}

/// Two-step control: energy shaping with `J₂` plus damping
/// `−K_P Gᵀ M_d⁻¹ p` (`K_P` is `m×m`).
pub fn ida_control(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    j2spec: &GyroscopicSpec,
    x: &State,
    kp: &Matrix,
) -> Result<Vector> {
    if kp.shape() != (sys.m, sys.m) {
        return Err(Error::Dimension(format!(
            "K_P is {:?}, expected ({}, {})",
            kp.shape(),
            sys.m,
            sys.m
        )));
    }
    let z = tgt.md_inv(&x.q)? * &x.p;
    let j2 = build_j2(j2spec, tgt.md.as_ref(), x)?;
    let shaping = energy_shaping_control(sys, tgt, x, &j2 * &z)?;
    let g = sys.input_map.value(&x.q);
    Ok(shaping - kp * g.transpose() * z)
}

/// Simultaneous control `(GᵀG)⁻¹Gᵀ[∇_qH − M_d M⁻¹ ∇_qH_d + Λ M_d⁻¹ p]`.
pub fn sida_control(sys: &MechanicalSystem, tgt: &TargetDynamics, x: &State) -> Result<Vector> {
    let z = tgt.md_inv(&x.q)? * &x.p;
    let lambda = (tgt.lambda)(x)?;
    energy_shaping_control(sys, tgt, x, lambda * z)
}

/// [`sida_control`] packaged as a [`ControlLaw`].
pub fn sida_control_law(sys: MechanicalSystem, tgt: TargetDynamics) -> ControlLaw {
    Arc::new(move |x: &State| sida_control(&sys, &tgt, x))
}

/// Full (not annihilated) matching defect of a control law:
/// `[drift + G u] − [−M_d M⁻¹ ∇_q H_d + Λ M_d⁻¹ p]`.
///
/// For a port-Hamiltonian plant the drift is `−∇_q H`.
pub fn sida_matching_residual(
    plant: &dyn SecondOrderPlant,
    u_law: &dyn Fn(&State) -> Result<Vector>,
    tgt: &TargetDynamics,
    x: &State,
) -> Result<Vector> {
    let u = u_law(x)?;
    let closed = plant.rate(x, &u)?;
    let target = crate::system::target_field(plant, tgt, x)?;
    Ok(closed.p - target.p)
}

/// `A_k`, `Γ_k·` and `B_k` at `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Terms {
    pub a: Matrix,
    pub gamma: Vector,
    pub b: Matrix,
}

fn annihilator_row(sys: &MechanicalSystem, q: &Vector, k: usize) -> Result<Vector> {
    let a = sys.annihilator_at(q)?;
    if k >= a.nrows() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: a.nrows(),
        });
    }
    Ok(a.row(k).transpose())
}

/// `A_k = M_d (Σᵢ v_ki ∂ᵢM⁻¹) M_d`, `Γ_kj = Σᵢ v_ki (M_d M⁻¹)_ij`,
/// `B_k = M_d (Σᵢ Γ_ki ∂ᵢM_d⁻¹) M_d`. `k` is zero-based.
pub fn lemma1_terms(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    k: usize,
    q: &Vector,
) -> Result<Lemma1Terms> {
    let v = annihilator_row(sys, q, k)?;
    let (m_inv, m_inv_d) = sys.inertia_inv_partials(q)?;
    let (_, md_inv_d) = tgt.md_inv_partials(q)?;
    let md = tgt.md.value(q);
    let n = sys.n;
    let mut sa = Matrix::zeros(n, n);
    for (i, d) in m_inv_d.iter().enumerate() {
        sa += d * v[i];
    }
    let gamma = (v.transpose() * &md * &m_inv).transpose();
    let mut sb = Matrix::zeros(n, n);
    for (i, d) in md_inv_d.iter().enumerate() {
        sb += d * gamma[i];
    }
    Ok(Lemma1Terms {
        a: &md * sa * &md,
        gamma,
        b: &md * sb * &md,
    })
}

/// `W_k = S + Sᵀ` where row `i` of `S` is `v_kᵀ Uᵢ`.
pub fn lemma1_w(sys: &MechanicalSystem, j2spec: &GyroscopicSpec, k: usize, q: &Vector) -> Result<Matrix> {
    let v = annihilator_row(sys, q, k)?;
    let n = sys.n;
    let mut s = Matrix::zeros(n, n);
    for (i, u) in j2spec.u_mats.iter().enumerate() {
        s.row_mut(i).copy_from(&(v.transpose() * u.value(q)));
    }
    Ok(&s + s.transpose())
}

/// `B_k − A_k − W_k`.
pub fn lemma1_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    j2spec: &GyroscopicSpec,
    k: usize,
    q: &Vector,
) -> Result<Matrix> {
    let t = lemma1_terms(sys, tgt, k, q)?;
    Ok(t.b - t.a - lemma1_w(sys, j2spec, k, q)?)
}

/// Relation between the two forms of the kinetic-energy equation: the
/// `k`-th entry of [`ida_ke_residual`] equals
/// `LEMMA1_SIGN · zᵀ (B_k − A_k − W_k) z` with `z = M_d⁻¹ p`.
pub const LEMMA1_SIGN: f64 = -1.0;

/// Matrix form of the generalized-force kinetic-energy equation, row `k`:
/// `Σᵢ [Γ_ki ∂ᵢM_d + v_ki M_d (∂ᵢM⁻¹) M_d] + Σᵢ v_ki Qᵢ`.
///
/// Its quadratic form in `z = M_d⁻¹ p` equals the `k`-th entry of
/// [`sida_ke_residual`].
pub fn sida_ke_matrix_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    gspec: &GeneralizedForceSpec,
    k: usize,
    q: &Vector,
) -> Result<Matrix> {
    let v = annihilator_row(sys, q, k)?;
    let t = lemma1_terms(sys, tgt, k, q)?;
    let md_d = tgt.md.partials(q);
    let n = sys.n;
    let mut out = t.a;
    for i in 0..n {
        out += &md_d[i] * t.gamma[i];
        out += gspec.q_mats[i].value(q) * v[i];
    }
    Ok(out)
}

/// Number of independent kinetic-energy PDEs for `s` unactuated
/// directions: `s(s+1)(s+2)/6`.
pub fn pde_count(s: u64) -> u64 {
    s * (s + 1) * (s + 2) / 6
}

/// Pointwise stability condition `pᵀ M_d⁻¹ Λ M_d⁻¹ p ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    /// `pᵀ M_d⁻¹ Λ M_d⁻¹ p`.
    pub value: f64,
    /// `value ≤ 1e-12`.
    pub ok: bool,
    /// The sufficient condition `Λ + Λᵀ ⪯ 0` (max eigenvalue ≤ 1e-12).
    pub symmetric_part_nsd: bool,
}

pub const STABILITY_TOL: f64 = 1e-12;

pub fn stability_condition(tgt: &TargetDynamics, x: &State) -> Result<StabilityCheck> {
    let z = tgt.md_inv(&x.q)? * &x.p;
    let lambda = (tgt.lambda)(x)?;
    let value = z.dot(&(&lambda * &z));
    let sym = &lambda + lambda.transpose();
    let max_eig = linalg::sym_eigenvalues(&sym)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY);
    Ok(StabilityCheck {
        value,
        ok: value <= STABILITY_TOL,
        symmetric_part_nsd: max_eig <= STABILITY_TOL,
    })
}

/// `y_D = (−(Λ + Λᵀ))^{1/2} M_d⁻¹ p`, so that `Ḣ_d = −½ |y_D|²`.
pub fn y_d(tgt: &TargetDynamics, x: &State) -> Result<Vector> {
    let z = tgt.md_inv(&x.q)? * &x.p;
    let lambda = (tgt.lambda)(x)?;
    let root = linalg::psd_sqrt(&(-(&lambda + lambda.transpose())))?;
    Ok(root * z)
}

/// `Ḣ_d = ∇_qH_dᵀ q̇ + ∇_pH_dᵀ ṗ` along the target vector field.
pub fn hd_dot(plant: &dyn SecondOrderPlant, tgt: &TargetDynamics, x: &State) -> Result<f64> {
    let r = crate::system::target_field(plant, tgt, x)?;
    Ok(tgt.grad_q_hd(x)?.dot(&r.q) + tgt.grad_p_hd(x)?.dot(&r.p))
}

/// `Ḣ_d` along the actual closed loop `plant + u_law`.
pub fn hd_dot_closed_loop(
    plant: &dyn SecondOrderPlant,
    u_law: &dyn Fn(&State) -> Result<Vector>,
    tgt: &TargetDynamics,
    x: &State,
) -> Result<f64> {
    let u = u_law(x)?;
    let r = plant.rate(x, &u)?;
    Ok(tgt.grad_q_hd(x)?.dot(&r.q) + tgt.grad_p_hd(x)?.dot(&r.p))
}
