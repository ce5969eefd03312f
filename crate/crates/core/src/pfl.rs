//! Energy shaping on a partially feedback-linearized plant.
//!
//! Coordinates split as `q = (q_a, q_u)` with `m` actuated and `s`
//! unactuated entries. After the linearizing inner loop the plant is
//!
//! ```text
//! q̇ = M̃⁻¹ p,   ṗ = −∇_q H̃ + G̃ v,   H̃ = ½ pᵀ M̃⁻¹ p + V_u(q_u),
//! M̃ = blkdiag(I_m, m_uu(q_u)),   G̃ = [I_m; −m_auᵀ(q_u)],
//! ```
//!
//! with momentum `p = M̃ q̇`. The inner loop itself is not modelled: closed
//! loops start from this system.
//!
//! The blocks `m_au`, `m_uu`, `V_u` and `V_N` are fields over `q_u` alone (their
//! `dim()` is `s`); everything built here lifts them to the full `n = m + s`
//! coordinates with zero partials along `q_a`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{
    slice, ConstMatrix, EmbeddedMatrix, EmbeddedScalar, FnMatrix, FnScalar, InverseField,
    MatrixField, SharedMatrix, SharedScalar, SharedVector,
};
use crate::jet::Jet;
use crate::linalg;
use crate::system::{
    vd_minimum_stats, ControlLaw, MechanicalSystem, State, StateMatrixMap, TargetDynamics,
    VD_GRADIENT_TOL,
};
use crate::{Matrix, Vector};

/// Mechanical data partitioned into actuated and unactuated blocks.
#[derive(Clone)]
pub struct PartitionedSystem {
    pub m: usize,
    pub s: usize,
    /// Constant actuated inertia block. Not used after linearization but kept
    /// so that the original inertia can be rebuilt.
    pub m_aa: Matrix,
    /// `m×s` coupling block, over `q_u`.
    pub m_au: SharedMatrix,
    /// `s×s` unactuated block, over `q_u`.
    pub m_uu: SharedMatrix,
    /// Actuated potential over `q_a`; cancelled by the inner loop.
    pub v_a: SharedScalar,
    /// Unactuated potential over `q_u`.
    pub v_u: SharedScalar,
    /// `V_N: ℝ^s → ℝ^m` with `∇V_N = −m_au`.
    pub v_n: SharedVector,
}

/// Largest defects of the structural assumptions at a set of `q_u` probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureDefects {
    /// `max |∂_j (m_au)_{ik} − ∂_k (m_au)_{ij}|`: each row of `m_au` is a
    /// gradient field (this is the same condition whether stated on rows or
    /// on columns of the coupling block).
    pub gradient_rows: f64,
    /// `max |∇V_N + m_au|`.
    pub v_n_jacobian: f64,
}

impl StructureDefects {
    pub fn passes(&self, tol: f64) -> bool {
        self.gradient_rows <= tol && self.v_n_jacobian <= tol
    }
}

impl PartitionedSystem {
    pub fn n(&self) -> usize {
        self.m + self.s
    }

    /// Checks block shapes and coordinate counts.
    pub fn validate_shapes(&self) -> Result<()> {
        let (m, s) = (self.m, self.s);
        let ok = self.m_aa.shape() == (m, m)
            && self.m_au.shape() == (m, s)
            && self.m_au.dim() == s
            && self.m_uu.shape() == (s, s)
            && self.m_uu.dim() == s
            && self.v_a.dim() == m
            && self.v_u.dim() == s
            && self.v_n.dim() == s
            && self.v_n.len() == m;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "partitioned blocks inconsistent with m = {m}, s = {s}"
            )))
        }
    }

    pub fn structure_defects(&self, probes: &[Vector]) -> StructureDefects {
        let mut out = StructureDefects {
            gradient_rows: 0.0,
            v_n_jacobian: 0.0,
        };
        for qu in probes {
            let parts = self.m_au.partials(qu);
            for i in 0..self.m {
                for j in 0..self.s {
                    for k in 0..self.s {
                        let d = (parts[j][(i, k)] - parts[k][(i, j)]).abs();
                        out.gradient_rows = out.gradient_rows.max(d);
                    }
                }
            }
            let d = linalg::max_abs(&(self.v_n.jacobian(qu) + self.m_au.value(qu)));
            out.v_n_jacobian = out.v_n_jacobian.max(d);
        }
        out
    }

    /// Full inertia `[[m_aa, m_au], [m_auᵀ, m_uu]]` at `q`.
    pub fn inertia(&self, q: &Vector) -> Matrix {
        let qu = self.q_u(q);
        let m_au = self.m_au.value(&qu);
        linalg::vstack(
            &linalg::hstack(&self.m_aa, &m_au),
            &linalg::hstack(&m_au.transpose(), &self.m_uu.value(&qu)),
        )
    }

    pub fn q_a(&self, q: &Vector) -> Vector {
        slice(q, 0, self.m)
    }

    pub fn q_u(&self, q: &Vector) -> Vector {
        slice(q, self.m, self.s)
    }
}

/// Gains of the construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k_e: f64,
    pub k_a: f64,
    pub k_u: f64,
    /// `m×m`, symmetric positive semidefinite.
    pub k_k: Matrix,
    /// `m×m`, symmetric positive semidefinite.
    pub k_i: Matrix,
    /// `m×m`, symmetric positive definite.
    pub k_p: Matrix,
}

impl GainSet {
    /// Scalar gains for a single input.
    pub fn scalar(k_e: f64, k_a: f64, k_u: f64, k_k: f64, k_i: f64, k_p: f64) -> Self {
        let one = |x: f64| Matrix::from_element(1, 1, x);
        GainSet {
            k_e,
            k_a,
            k_u,
            k_k: one(k_k),
            k_i: one(k_i),
            k_p: one(k_p),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for (name, mat) in [("K_k", &self.k_k), ("K_I", &self.k_i), ("K_P", &self.k_p)] {
            if mat.shape() != (m, m) {
                return Err(Error::Dimension(format!(
                    "{name} is {:?}, expected ({m}, {m})",
                    mat.shape()
                )));
            }
            if linalg::asymmetry(mat) > 1e-12 * (1.0 + linalg::max_abs(mat)) {
                return Err(Error::GainCondition(format!("{name} is not symmetric")));
            }
        }
        if m > 0 {
            if linalg::min_eigenvalue(&self.k_k) < 0.0 {
                return Err(Error::GainCondition("K_k is not positive semidefinite".into()));
            }
            if linalg::min_eigenvalue(&self.k_i) < 0.0 {
                return Err(Error::GainCondition("K_I is not positive semidefinite".into()));
            }
            if !(linalg::min_eigenvalue(&self.k_p) > 0.0) {
                return Err(Error::GainCondition("K_P is not positive definite".into()));
            }
        }
        if ![self.k_e, self.k_a, self.k_u].iter().all(|g| g.is_finite()) {
            return Err(Error::GainCondition("non-finite scalar gain".into()));
        }
        Ok(())
    }

    /// `K_I = 0`, in which case `V_d` does not depend on `q_a`.
    pub fn integral_free(&self) -> bool {
        linalg::max_abs(&self.k_i) == 0.0
    }
}

/// Jets of `m_au` and `m_uu⁻¹` over `q_u`.
struct QuJets {
    m_au: Jet,
    m_uu_inv: Jet,
}

fn qu_jets(ps: &PartitionedSystem, qu: &Vector) -> Result<QuJets> {
    let m_uu_inv = Jet::from_field(ps.m_uu.as_ref(), qu)
        .inverse()
        .map_err(|_| Error::Singular {
            what: "m_uu",
            q: qu.iter().copied().collect(),
        })?;
    Ok(QuJets {
        m_au: Jet::from_field(ps.m_au.as_ref(), qu),
        m_uu_inv,
    })
}

fn block_jet(tl: &Jet, tr: &Jet, bl: &Jet, br: &Jet) -> Jet {
    let assemble = |a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix| {
        linalg::vstack(&linalg::hstack(a, b), &linalg::hstack(c, d))
    };
    Jet {
        value: assemble(&tl.value, &tr.value, &bl.value, &br.value),
        partials: (0..tl.dim())
            .map(|i| assemble(&tl.partials[i], &tr.partials[i], &bl.partials[i], &br.partials[i]))
            .collect(),
    }
}

/// Partials over `q_u` lifted to `n` coordinates.
fn lift_partials(partials: &[Matrix], m: usize) -> Vec<Matrix> {
    let (r, c) = partials
        .first()
        .map_or((0, 0), |d| d.shape());
    let mut out = vec![Matrix::zeros(r, c); m];
    out.extend(partials.iter().cloned());
    out
}

/// Lifts an `r×s` Jacobian over `q_u` to `r×n`.
fn lift_columns(j: &Matrix, m: usize) -> Matrix {
    linalg::hstack(&Matrix::zeros(j.nrows(), m), j)
}

/// Post-PFL plant: inertia `blkdiag(I_m, m_uu)`, potential `V_u`, input map
/// `[I_m; −m_auᵀ]` and the analytic annihilator `[m_auᵀ, I_s]`.
pub fn pfl_system(ps: &PartitionedSystem) -> Result<MechanicalSystem> {
    ps.validate_shapes()?;
    let (m, s, n) = (ps.m, ps.s, ps.n());

    let m_uu = ps.m_uu.clone();
    let m_uu_d = ps.m_uu.clone();
    let inertia = FnMatrix::new(
        n,
        (n, n),
        move |q| linalg::block_diag(&Matrix::identity(m, m), &m_uu.value(&slice(q, m, s))),
        move |q, i| {
            if i < m {
                Matrix::zeros(n, n)
            } else {
                linalg::block_diag(&Matrix::zeros(m, m), &m_uu_d.partial(&slice(q, m, s), i - m))
            }
        },
    )
    .shared();

    let m_au = ps.m_au.clone();
    let m_au_d = ps.m_au.clone();
    let g_tilde = FnMatrix::new(
        n,
        (n, m),
        move |q| linalg::vstack(&Matrix::identity(m, m), &(-m_au.value(&slice(q, m, s)).transpose())),
        move |q, i| {
            if i < m {
                Matrix::zeros(n, m)
            } else {
                linalg::vstack(
                    &Matrix::zeros(m, m),
                    &(-m_au_d.partial(&slice(q, m, s), i - m).transpose()),
                )
            }
        },
    )
    .shared();

    let m_au = ps.m_au.clone();
    let m_au_d = ps.m_au.clone();
    let annihilator = FnMatrix::new(
        n,
        (s, n),
        move |q| linalg::hstack(&m_au.value(&slice(q, m, s)).transpose(), &Matrix::identity(s, s)),
        move |q, i| {
            if i < m {
                Matrix::zeros(s, n)
            } else {
                linalg::hstack(
                    &m_au_d.partial(&slice(q, m, s), i - m).transpose(),
                    &Matrix::zeros(s, s),
                )
            }
        },
    )
    .shared();

    let potential = Arc::new(EmbeddedScalar::new(ps.v_u.clone(), m, n));
    MechanicalSystem::new(inertia, potential, g_tilde)?.with_annihilator(annihilator)
}

/// `K = k_e I + k_a K_k + k_u K_k m_au m_uu⁻¹ m_auᵀ` at `q_u`.
pub fn k_matrix(ps: &PartitionedSystem, g: &GainSet, qu: &Vector) -> Result<Matrix> {
    let m_au = ps.m_au.value(qu);
    let m_uu_inv = linalg::inverse_at(&ps.m_uu.value(qu), "m_uu", qu)?;
    Ok(Matrix::identity(ps.m, ps.m) * g.k_e
        + &g.k_k * g.k_a
        + &g.k_k * &m_au * m_uu_inv * m_au.transpose() * g.k_u)
}

/// `det K(q_u)`.
pub fn k_determinant(ps: &PartitionedSystem, g: &GainSet, qu: &Vector) -> Result<f64> {
    Ok(k_matrix(ps, g, qu)?.determinant())
}

fn k_inverse(ps: &PartitionedSystem, g: &GainSet, qu: &Vector) -> Result<(Matrix, Matrix)> {
    let k = k_matrix(ps, g, qu)?;
    let inv = linalg::inverse(&k).ok_or_else(|| {
        Error::GainCondition(format!("K(q_u) is singular at q_u = {:?}", qu.as_slice()))
    })?;
    Ok((k, inv))
}

/// Jet over `q_u` of `M_d⁻¹ = [[k_e k_a I + k_a² K_k, 𝒳], [𝒳ᵀ, 𝒴]]` with
/// `𝒳 = −k_a k_u K_k m_au m_uu⁻¹` and
/// `𝒴 = k_e k_u m_uu⁻¹ + k_u² m_uu⁻¹ m_auᵀ K_k m_au m_uu⁻¹`.
fn md_inv_jet(ps: &PartitionedSystem, g: &GainSet, qu: &Vector) -> Result<Jet> {
    let j = qu_jets(ps, qu)?;
    let s = ps.s;
    let kk = Jet::constant(g.k_k.clone(), s);
    let tl = Jet::constant(
        Matrix::identity(ps.m, ps.m) * (g.k_e * g.k_a) + &g.k_k * (g.k_a * g.k_a),
        s,
    );
    let x = (&(&kk * &j.m_au) * &j.m_uu_inv).scale(-g.k_a * g.k_u);
    let coupling = &(&(&(&j.m_uu_inv * &j.m_au.transpose()) * &kk) * &j.m_au) * &j.m_uu_inv;
    let y = &j.m_uu_inv.scale(g.k_e * g.k_u) + &coupling.scale(g.k_u * g.k_u);
    Ok(block_jet(&tl, &x, &x.transpose(), &y))
}

/// `M_d⁻¹(q_u)` at a full configuration `q`.
pub fn md_inv_pfl(ps: &PartitionedSystem, g: &GainSet, q: &Vector) -> Result<Matrix> {
    Ok(md_inv_jet(ps, g, &ps.q_u(q))?.value)
}

/// `M_d⁻¹` as a field over the full coordinates.
pub struct MdInvField {
    ps: PartitionedSystem,
    gains: GainSet,
}

impl MdInvField {
    pub fn new(ps: PartitionedSystem, gains: GainSet) -> Self {
        MdInvField { ps, gains }
    }

    fn jet(&self, q: &Vector) -> Jet {
        md_inv_jet(&self.ps, &self.gains, &self.ps.q_u(q)).expect("m_uu singular")
    }
}

impl MatrixField for MdInvField {
    fn dim(&self) -> usize {
        self.ps.n()
    }
    fn shape(&self) -> (usize, usize) {
        (self.ps.n(), self.ps.n())
    }
    fn value(&self, q: &Vector) -> Matrix {
        self.jet(q).value
    }
    fn partial(&self, q: &Vector, i: usize) -> Matrix {
        let n = self.ps.n();
        if i < self.ps.m {
            return Matrix::zeros(n, n);
        }
        self.jet(q).partials.swap_remove(i - self.ps.m)
    }
    fn partials(&self, q: &Vector) -> Vec<Matrix> {
        lift_partials(&self.jet(q).partials, self.ps.m)
    }
}

/// `V_d = k_e k_u V_u(q_u) + ½ ‖k_a q_a + k_u V_N(q_u)‖²_{K_I}`.
pub fn vd_pfl(ps: &PartitionedSystem, g: &GainSet, q: &Vector) -> f64 {
    let (qa, qu) = (ps.q_a(q), ps.q_u(q));
    let r = &qa * g.k_a + ps.v_n.value(&qu) * g.k_u;
    g.k_e * g.k_u * ps.v_u.value(&qu) + 0.5 * r.dot(&(&g.k_i * &r))
}

/// Gradient of [`vd_pfl`], using `∇V_N = −m_au`.
pub fn vd_pfl_gradient(ps: &PartitionedSystem, g: &GainSet, q: &Vector) -> Vector {
    let (qa, qu) = (ps.q_a(q), ps.q_u(q));
    let r = &qa * g.k_a + ps.v_n.value(&qu) * g.k_u;
    let kr = &g.k_i * &r;
    let ga = &kr * g.k_a;
    let gu = ps.v_u.gradient(&qu) * (g.k_e * g.k_u) - ps.m_au.value(&qu).transpose() * &kr * g.k_u;
    let mut out = Vector::zeros(ps.n());
    out.rows_mut(0, ps.m).copy_from(&ga);
    out.rows_mut(ps.m, ps.s).copy_from(&gu);
    out
}

pub fn vd_field(ps: &PartitionedSystem, g: &GainSet) -> SharedScalar {
    let (ps1, g1, ps2, g2) = (ps.clone(), g.clone(), ps.clone(), g.clone());
    FnScalar::new(
        ps.n(),
        move |q| vd_pfl(&ps1, &g1, q),
        move |q| vd_pfl_gradient(&ps2, &g2, q),
    )
    .shared()
}

/// Momentum-dependent quantities shared by the control law, `Λ` and the
/// appendix identities.
struct MomentumTerms {
    qa: Vector,
    qu: Vector,
    pa: Vector,
    pu: Vector,
    m_au: Matrix,
    m_uu_inv: Matrix,
    /// `m_uu⁻¹ p_u`.
    w: Vector,
    /// Jacobian over `q_u` of `m_uu⁻¹ p_u` (`s×s`).
    j_w: Matrix,
    /// Jacobian over `q_u` of `m_au m_uu⁻¹ p_u` (`m×s`).
    j_mw: Matrix,
    k: Matrix,
    k_inv: Matrix,
}

fn momentum_terms(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<MomentumTerms> {
    if x.dof() != ps.n() {
        return Err(Error::Dimension(format!(
            "state has {} dof, partitioned system has {}",
            x.dof(),
            ps.n()
        )));
    }
    let (qa, qu) = (ps.q_a(&x.q), ps.q_u(&x.q));
    let pa = slice(&x.p, 0, ps.m);
    let pu = slice(&x.p, ps.m, ps.s);
    let j = qu_jets(ps, &qu)?;
    let pu_jet = Jet::constant_vector(&pu, ps.s);
    let w_jet = &j.m_uu_inv * &pu_jet;
    let mw_jet = &j.m_au * &w_jet;
    let (k, k_inv) = k_inverse(ps, g, &qu)?;
    Ok(MomentumTerms {
        w: w_jet.value.column(0).into_owned(),
        j_w: w_jet.jacobian(),
        j_mw: mw_jet.jacobian(),
        m_au: j.m_au.value,
        m_uu_inv: j.m_uu_inv.value,
        qa,
        qu,
        pa,
        pu,
        k,
        k_inv,
    })
}

/// `R = k_u K_k m_au m_uu⁻¹ ∇ᵀ_{q_u}[m_uu⁻¹p_u] − 2 k_u K_k ∇_{q_u}[m_au m_uu⁻¹ p_u] m_uu⁻¹`
/// (`m×s`), the momentum block of the force term.
fn r_block(g: &GainSet, t: &MomentumTerms) -> Matrix {
    (&g.k_k * &t.m_au * &t.m_uu_inv * t.j_w.transpose()
        - &g.k_k * &t.j_mw * &t.m_uu_inv * 2.0)
        * g.k_u
}

/// Passive output `y_N = k_a p_a − k_u m_au m_uu⁻¹ p_u`.
pub fn y_n(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<Vector> {
    let qu = ps.q_u(&x.q);
    let m_uu_inv = linalg::inverse_at(&ps.m_uu.value(&qu), "m_uu", &qu)?;
    let pa = slice(&x.p, 0, ps.m);
    let pu = slice(&x.p, ps.m, ps.s);
    Ok(pa * g.k_a - ps.m_au.value(&qu) * m_uu_inv * pu * g.k_u)
}

/// Outer-loop control
///
/// ```text
/// v = −K⁻¹[ k_u K_k m_au m_uu⁻¹ ∇V_u + K_I (k_a q_a + k_u V_N)
///           + (k_u/2) K_k m_au m_uu⁻¹ ∇ᵀ_{q_u}[m_uu⁻¹p_u] p_u
///           − k_u K_k ∇_{q_u}[m_au m_uu⁻¹ p_u] m_uu⁻¹ p_u ]
///     − K_P Kᵀ y_N.
/// ```
///
/// The two momentum-quadratic terms carry the signs under which the closed
/// loop matches the target built from [`donaire_lambda`].
pub fn donaire_control(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<Vector> {
    let t = momentum_terms(ps, g, x)?;
    let coupling = &g.k_k * &t.m_au * &t.m_uu_inv;
    let r = &t.qa * g.k_a + ps.v_n.value(&t.qu) * g.k_u;
    let bracket = &coupling * ps.v_u.gradient(&t.qu) * g.k_u
        + &g.k_i * r
        + &coupling * t.j_w.transpose() * &t.pu * (0.5 * g.k_u)
        - &g.k_k * &t.j_mw * &t.w * g.k_u;
    let yn = &t.pa * g.k_a - &t.m_au * &t.w * g.k_u;
    Ok(-(&t.k_inv * bracket) - &g.k_p * t.k.transpose() * yn)
}

pub fn donaire_control_law(ps: &PartitionedSystem, g: &GainSet) -> ControlLaw {
    let (ps, g) = (ps.clone(), g.clone());
    Arc::new(move |x: &State| donaire_control(&ps, &g, x))
}

/// The three momentum-linear matrices whose `M_d`-congruence forms `Λ`,
/// computed from their defining expressions:
/// `Δ₁ = −M_d⁻¹ G̃ K⁻¹ [0 ⋮ R]`, `Δ₂ = −M_d⁻¹ ∇ᵀ_q[M̃⁻¹p]`,
/// `Δ₃ = M̃⁻¹ ∇ᵀ_q[M_d⁻¹p]`.
pub fn delta_terms(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<[Matrix; 3]> {
    let t = momentum_terms(ps, g, x)?;
    let (m, s, n) = (ps.m, ps.s, ps.n());
    let md_jet = md_inv_jet(ps, g, &t.qu)?;
    let md_inv = &md_jet.value;
    let g_tilde = linalg::vstack(&Matrix::identity(m, m), &(-t.m_au.transpose()));
    let m_tilde_inv = linalg::block_diag(&Matrix::identity(m, m), &t.m_uu_inv);

    let force = lift_columns(&r_block(g, &t), m);
    let d1 = -(md_inv * &g_tilde * &t.k_inv * force);

    // ∇_q[M̃⁻¹p] is zero except for the q_u-columns of its lower block.
    let mut j_mt = Matrix::zeros(n, n);
    j_mt.view_mut((m, m), (s, s)).copy_from(&t.j_w);
    let d2 = -(md_inv * j_mt.transpose());

    let p_jet = Jet::constant_vector(&x.p, s);
    let j_md = lift_columns(&(&md_jet * &p_jet).jacobian(), m);
    let d3 = m_tilde_inv * j_md.transpose();
    Ok([d1, d2, d3])
}

/// The same three matrices from their explicit block expansions.
pub fn delta_terms_blockwise(
    ps: &PartitionedSystem,
    g: &GainSet,
    x: &State,
) -> Result<[Matrix; 3]> {
    let t = momentum_terms(ps, g, x)?;
    let (m, s) = (ps.m, ps.s);
    let (ka, ku, ke) = (g.k_a, g.k_u, g.k_e);
    let kk = &g.k_k;
    let j_wt = t.j_w.transpose();
    let back = &t.m_uu_inv * t.m_au.transpose();
    let bracket = &t.m_au * &t.m_uu_inv * &j_wt - &t.j_mw * &t.m_uu_inv * 2.0;

    let blocks = |tl: Matrix, tr: Matrix, bl: Matrix, br: Matrix| {
        linalg::vstack(&linalg::hstack(&tl, &tr), &linalg::hstack(&bl, &br))
    };
    let zmm = Matrix::zeros(m, m);
    let zsm = Matrix::zeros(s, m);
    let zms = Matrix::zeros(m, s);

    let d1 = blocks(
        zmm.clone(),
        kk * &bracket * (-ka * ku),
        zsm.clone(),
        &back * kk * &bracket * (ku * ku),
    );
    let d2 = blocks(
        zmm.clone(),
        kk * &t.m_au * &t.m_uu_inv * &j_wt * (ka * ku),
        zsm,
        -(&t.m_uu_inv * &j_wt * (ke * ku))
            - &back * kk * &t.m_au * &t.m_uu_inv * &j_wt * (ku * ku),
    );

    // Jacobians over q_u of m_uu⁻¹ m_auᵀ K_k p_a and of
    // m_uu⁻¹ m_auᵀ K_k m_au m_uu⁻¹ p_u.
    let j = qu_jets(ps, &t.qu)?;
    let kk_jet = Jet::constant(kk.clone(), s);
    let pa_jet = Jet::constant_vector(&t.pa, s);
    let pu_jet = Jet::constant_vector(&t.pu, s);
    let back_jet = &j.m_uu_inv * &j.m_au.transpose();
    let j_a = (&(&back_jet * &kk_jet) * &pa_jet).jacobian();
    let j_b = (&(&(&(&back_jet * &kk_jet) * &j.m_au) * &j.m_uu_inv) * &pu_jet).jacobian();

    let d3 = blocks(
        zmm,
        zms,
        -(&t.m_uu_inv * (kk * &t.j_mw).transpose() * (ka * ku)),
        -(&t.m_uu_inv * j_a.transpose() * (ka * ku))
            + &t.m_uu_inv * &j_wt * (ke * ku)
            + &t.m_uu_inv * j_b.transpose() * (ku * ku),
    );
    Ok([d1, d2, d3])
}

/// `Λ = ½ M_d (Δ₁ + Δ₂ + Δ₃) M_d − G̃ K_P G̃ᵀ`.
pub fn donaire_lambda(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<Matrix> {
    let [d1, d2, d3] = delta_terms(ps, g, x)?;
    let md = linalg::inverse_at(&md_inv_pfl(ps, g, &x.q)?, "target inertia M_d", &x.q)?;
    let qu = ps.q_u(&x.q);
    let g_tilde = linalg::vstack(
        &Matrix::identity(ps.m, ps.m),
        &(-ps.m_au.value(&qu).transpose()),
    );
    Ok(&md * (d1 + d2 + d3) * &md * 0.5 - &g_tilde * &g.k_p * g_tilde.transpose())
}

pub fn donaire_lambda_map(ps: &PartitionedSystem, g: &GainSet) -> StateMatrixMap {
    let (ps, g) = (ps.clone(), g.clone());
    Arc::new(move |x: &State| donaire_lambda(&ps, &g, x))
}

/// Target dynamics `(M_d, V_d, Λ, q*)` of the construction.
pub fn pfl_target(ps: &PartitionedSystem, g: &GainSet, q_star: Vector) -> Result<TargetDynamics> {
    ps.validate_shapes()?;
    g.validate(ps.m)?;
    if q_star.len() != ps.n() {
        return Err(Error::Dimension(format!(
            "q* has {} entries, expected {}",
            q_star.len(),
            ps.n()
        )));
    }
    let md_inv: SharedMatrix = Arc::new(MdInvField::new(ps.clone(), g.clone()));
    Ok(TargetDynamics {
        md: InverseField::new(md_inv).shared(),
        vd: vd_field(ps, g),
        lambda: donaire_lambda_map(ps, g),
        q_star,
    })
}

/// `M_d⁻¹ G̃ − [k_a I_m; −k_u m_uu⁻¹ m_auᵀ] K`, identically zero.
pub fn appendix_lemma_check(ps: &PartitionedSystem, g: &GainSet, qu: &Vector) -> Result<Matrix> {
    let m = ps.m;
    let m_au = ps.m_au.value(qu);
    let m_uu_inv = linalg::inverse_at(&ps.m_uu.value(qu), "m_uu", qu)?;
    let md_inv = md_inv_jet(ps, g, qu)?.value;
    let g_tilde = linalg::vstack(&Matrix::identity(m, m), &(-m_au.transpose()));
    let left = linalg::vstack(
        &(Matrix::identity(m, m) * g.k_a),
        &(-(m_uu_inv * m_au.transpose()) * g.k_u),
    );
    Ok(md_inv * g_tilde - left * k_matrix(ps, g, qu)?)
}

/// `pᵀ(Δ₁ + Δ₂ + Δ₃)p` from the block expansions; identically zero, so the
/// only contribution to `pᵀ M_d⁻¹ Λ M_d⁻¹ p` is the damping term.
pub fn appendix_delta_identity(ps: &PartitionedSystem, g: &GainSet, x: &State) -> Result<f64> {
    let [d1, d2, d3] = delta_terms_blockwise(ps, g, x)?;
    Ok(x.p.dot(&((d1 + d2 + d3) * &x.p)))
}

/// Outcome of one gain condition over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: &'static str,
    pub passed: bool,
    /// Value at the worst point: `min |det K|`, `min eig M_d⁻¹`, or the
    /// minimum Hessian eigenvalue of `V_d` at `q*`.
    pub worst_value: f64,
    pub worst_at: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub det_k: ConditionResult,
    pub md_inv_pd: ConditionResult,
    pub vd_minimum: ConditionResult,
}

impl GainReport {
    pub fn passed(&self) -> bool {
        self.conditions().iter().all(|c| c.passed)
    }

    pub fn conditions(&self) -> [&ConditionResult; 3] {
        [&self.det_k, &self.md_inv_pd, &self.vd_minimum]
    }
}

/// Tensor grid over `q_u` plus the claimed equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBox {
    pub qu_lo: Vec<f64>,
    pub qu_hi: Vec<f64>,
    pub points_per_axis: usize,
    pub q_star: Vector,
}

impl GainBox {
    pub fn grid(&self) -> Vec<Vector> {
        let s = self.qu_lo.len();
        let k = self.points_per_axis.max(1);
        let axis = |d: usize, i: usize| {
            if k == 1 {
                0.5 * (self.qu_lo[d] + self.qu_hi[d])
            } else {
                self.qu_lo[d] + (self.qu_hi[d] - self.qu_lo[d]) * i as f64 / (k - 1) as f64
            }
        };
        let total = k.pow(s as u32);
        (0..total)
            .map(|mut idx| {
                Vector::from_iterator(
                    s,
                    (0..s).map(|d| {
                        let i = idx % k;
                        idx /= k;
                        axis(d, i)
                    }),
                )
            })
            .collect()
    }
}

/// Minimum `|det K|` below which `K` is reported singular.
pub const DET_K_TOL: f64 = 1e-9;

/// Checks, over a `q_u` grid: `det K ≠ 0` with constant sign, `M_d⁻¹ ≻ 0`,
/// and that `q*` is a strict minimum of `V_d` (over `q_u` only when
/// `K_I = 0`, since `V_d` is then independent of `q_a`).
pub fn gain_condition_check(ps: &PartitionedSystem, g: &GainSet, bx: &GainBox) -> Result<GainReport> {
    ps.validate_shapes()?;
    if bx.qu_lo.len() != ps.s || bx.qu_hi.len() != ps.s || bx.q_star.len() != ps.n() {
        return Err(Error::Dimension("gain box does not match the partition".into()));
    }
    let grid = bx.grid();
    let mut det_worst = (f64::INFINITY, vec![]);
    let mut signs = (false, false);
    let mut eig_worst = (f64::INFINITY, vec![]);
    for qu in &grid {
        let det = k_determinant(ps, g, qu)?;
        signs.0 |= det > 0.0;
        signs.1 |= det < 0.0;
        if det.abs() < det_worst.0 {
            det_worst = (det.abs(), qu.iter().copied().collect());
        }
        let e = linalg::min_eigenvalue(&md_inv_jet(ps, g, qu)?.value);
        if e < eig_worst.0 {
            eig_worst = (e, qu.iter().copied().collect());
        }
    }
    let det_k = ConditionResult {
        name: "det K(q_u) != 0",
        passed: det_worst.0 > DET_K_TOL && !(signs.0 && signs.1),
        worst_value: det_worst.0,
        worst_at: det_worst.1,
    };
    let md_inv_pd = ConditionResult {
        name: "M_d^-1 positive definite",
        passed: eig_worst.0 > 0.0,
        worst_value: eig_worst.0,
        worst_at: eig_worst.1,
    };

    let vd = vd_field(ps, g);
    let unactuated: Vec<usize> = (ps.m..ps.n()).collect();
    let checked = g.integral_free().then_some(unactuated.as_slice());
    let (gnorm, min_eig) = vd_minimum_stats(vd.as_ref(), &bx.q_star, checked)?;
    let vd_minimum = ConditionResult {
        name: "V_d strict minimum at q*",
        passed: gnorm <= VD_GRADIENT_TOL && min_eig > 0.0,
        worst_value: min_eig,
        worst_at: bx.q_star.iter().copied().collect(),
    };
    Ok(GainReport {
        det_k,
        md_inv_pd,
        vd_minimum,
    })
}

/// Lifts a `q_u` field to full coordinates; convenience for callers that
/// assemble the original (pre-linearization) plant.
pub fn lift_matrix(field: SharedMatrix, m: usize, n: usize) -> SharedMatrix {
    Arc::new(EmbeddedMatrix::new(field, m, n))
}

/// Original plant `[[m_aa, m_au], [m_auᵀ, m_uu]]`, `V_a + V_u`, `G = [I; 0]`.
pub fn original_system(ps: &PartitionedSystem) -> Result<MechanicalSystem> {
    ps.validate_shapes()?;
    let (m, s, n) = (ps.m, ps.s, ps.n());
    let (ps1, ps2) = (ps.clone(), ps.clone());
    let inertia = FnMatrix::new(
        n,
        (n, n),
        move |q| ps1.inertia(q),
        move |q, i| {
            if i < m {
                return Matrix::zeros(n, n);
            }
            let qu = ps2.q_u(q);
            let d_au = ps2.m_au.partial(&qu, i - m);
            linalg::vstack(
                &linalg::hstack(&Matrix::zeros(m, m), &d_au),
                &linalg::hstack(&d_au.transpose(), &ps2.m_uu.partial(&qu, i - m)),
            )
        },
    )
    .shared();
    let (va, vu) = (ps.v_a.clone(), ps.v_u.clone());
    let (va_g, vu_g) = (ps.v_a.clone(), ps.v_u.clone());
    let potential = FnScalar::new(
        n,
        move |q| va.value(&slice(q, 0, m)) + vu.value(&slice(q, m, s)),
        move |q| {
            let mut g = Vector::zeros(n);
            g.rows_mut(0, m).copy_from(&va_g.gradient(&slice(q, 0, m)));
            g.rows_mut(m, s).copy_from(&vu_g.gradient(&slice(q, m, s)));
            g
        },
    )
    .shared();
    let g = ConstMatrix::new(
        n,
        linalg::vstack(&Matrix::identity(m, m), &Matrix::zeros(s, m)),
    )
    .shared();
    MechanicalSystem::new(inertia, potential, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FnVector, ZeroScalar};
    use crate::matching::{sida_matching_residual, stability_condition};
    use nalgebra::{dmatrix, dvector};

    /// One input, two unactuated coordinates, `m_au = ∇φ` for a cubic `φ`
    /// and a configuration-dependent `m_uu`.
    fn coupled() -> PartitionedSystem {
        let phi_grad = |q: &Vector| dmatrix![0.6 * q[0] + 0.2 * q[1] + 0.5, 0.2 * q[0] + 0.3 * q[1] * q[1] - 0.4];
        let m_au = FnMatrix::new(2, (1, 2), phi_grad, |q, i| {
            if i == 0 {
                dmatrix![0.6, 0.2]
            } else {
                dmatrix![0.2, 0.6 * q[1]]
            }
        })
        .shared();
        let m_uu = FnMatrix::new(
            2,
            (2, 2),
            |q| dmatrix![2.0 + q[0] * q[0], 0.3 * q[1]; 0.3 * q[1], 3.0 + q[0].cos()],
            |q, i| {
                if i == 0 {
                    dmatrix![2.0 * q[0], 0.0; 0.0, -q[0].sin()]
                } else {
                    dmatrix![0.0, 0.3; 0.3, 0.0]
                }
            },
        )
        .shared();
        let v_u = FnScalar::new(
            2,
            |q| q[0].cos() + 0.5 * q[1] * q[1],
            |q| dvector![-q[0].sin(), q[1]],
        )
        .shared();
        let v_n = FnVector::new(
            2,
            1,
            |q| {
                dvector![-(0.3 * q[0] * q[0] + 0.2 * q[0] * q[1] + 0.1 * q[1].powi(3) + 0.5 * q[0] - 0.4 * q[1])]
            },
            move |q| -phi_grad(q),
        )
        .shared();
        PartitionedSystem {
            m: 1,
            s: 2,
            m_aa: dmatrix![1.5],
            m_au,
            m_uu,
            v_a: Arc::new(ZeroScalar(1)),
            v_u,
            v_n,
        }
    }

    fn gains() -> GainSet {
        GainSet::scalar(1.0, 0.7, -2.0, 0.8, 0.4, 1.3)
    }

    fn states() -> Vec<State> {
        crate::sampling::ProbeBox::symmetric(&[1.0, 0.8, 0.8], &[1.0, 1.0, 1.0])
            .sample_states(40, 11)
            .unwrap()
    }

    #[test]
    fn structure_defects_vanish_for_gradient_coupling() {
        let ps = coupled();
        let probes: Vec<Vector> = states().iter().map(|x| ps.q_u(&x.q)).collect();
        let d = ps.structure_defects(&probes);
        assert!(d.passes(1e-12), "{d:?}");
    }

    #[test]
    fn k_matrix_numeric_example() {
        // m_au m_uu⁻¹ m_auᵀ = 0.5 with m_au = 1, m_uu = 2.
        let ps = PartitionedSystem {
            m: 1,
            s: 1,
            m_aa: dmatrix![1.0],
            m_au: ConstMatrix::new(1, dmatrix![1.0]).shared(),
            m_uu: ConstMatrix::new(1, dmatrix![2.0]).shared(),
            v_a: Arc::new(ZeroScalar(1)),
            v_u: Arc::new(ZeroScalar(1)),
            v_n: FnVector::new(1, 1, |q| -q.clone(), |_| dmatrix![-1.0]).shared(),
        };
        let g = GainSet::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0);
        assert!((k_matrix(&ps, &g, &dvector![0.3]).unwrap()[(0, 0)] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn md_inv_partials_match_finite_differences() {
        let ps = coupled();
        let f = MdInvField::new(ps, gains());
        let probes: Vec<Vector> = states().into_iter().map(|x| x.q).collect();
        let check = crate::fd::check_matrix_field(&f, &probes).unwrap();
        assert!(check.passes(crate::fd::ORACLE_RTOL), "{check:?}");
    }

    #[test]
    fn vd_gradient_matches_finite_differences() {
        let ps = coupled();
        let vd = vd_field(&ps, &gains());
        let probes: Vec<Vector> = states().into_iter().map(|x| x.q).collect();
        let check = crate::fd::check_scalar_field(vd.as_ref(), &probes).unwrap();
        assert!(check.passes(crate::fd::ORACLE_RTOL), "{check:?}");
    }

    #[test]
    fn lemma_and_delta_identities() {
        let (ps, g) = (coupled(), gains());
        for x in states() {
            let lemma = appendix_lemma_check(&ps, &g, &ps.q_u(&x.q)).unwrap();
            assert!(linalg::max_abs(&lemma) < 1e-12);
            assert!(appendix_delta_identity(&ps, &g, &x).unwrap().abs() < 1e-10);
            let a = delta_terms(&ps, &g, &x).unwrap();
            let b = delta_terms_blockwise(&ps, &g, &x).unwrap();
            for (l, r) in a.iter().zip(&b) {
                assert!(linalg::max_abs(&(l - r)) < 1e-11);
            }
        }
    }

    #[test]
    fn control_closes_the_matching_equation() {
        let (ps, g) = (coupled(), gains());
        let plant = pfl_system(&ps).unwrap();
        let tgt = pfl_target(&ps, &g, Vector::zeros(3)).unwrap();
        let law = donaire_control_law(&ps, &g);
        for x in states() {
            let r = sida_matching_residual(&plant, law.as_ref(), &tgt, &x).unwrap();
            assert!(r.amax() < 1e-10, "{r}");
        }
    }

    #[test]
    fn energy_rate_is_the_damping_term() {
        let (ps, g) = (coupled(), gains());
        let tgt = pfl_target(&ps, &g, Vector::zeros(3)).unwrap();
        let plant = pfl_system(&ps).unwrap();
        for x in states() {
            let z = tgt.md_inv(&x.q).unwrap() * &x.p;
            let gz = plant.input_map.value(&x.q).transpose() * &z;
            let value = stability_condition(&tgt, &x).unwrap().value;
            assert!((value + gz.dot(&(&g.k_p * &gz))).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_blocks_reduce_lambda_to_damping() {
        let ps = PartitionedSystem {
            m: 1,
            s: 1,
            m_aa: dmatrix![1.0],
            m_au: ConstMatrix::new(1, dmatrix![0.4]).shared(),
            m_uu: ConstMatrix::new(1, dmatrix![2.0]).shared(),
            v_a: Arc::new(ZeroScalar(1)),
            v_u: Arc::new(ZeroScalar(1)),
            v_n: FnVector::new(1, 1, |q| dvector![-0.4 * q[0]], |_| dmatrix![-0.4]).shared(),
        };
        let g = gains();
        let x = State::from_slices(&[0.2, -0.1], &[0.7, -1.1]);
        let lambda = donaire_lambda(&ps, &g, &x).unwrap();
        let gt = dmatrix![1.0; -0.4];
        assert!(linalg::max_abs(&(lambda + &gt * &g.k_p * gt.transpose())) < 1e-13);
        assert_eq!(appendix_delta_identity(&ps, &g, &x).unwrap(), 0.0);
    }

    #[test]
    fn fully_actuated_partition() {
        let ps = PartitionedSystem {
            m: 2,
            s: 0,
            m_aa: Matrix::identity(2, 2),
            m_au: ConstMatrix::new(0, Matrix::zeros(2, 0)).shared(),
            m_uu: ConstMatrix::new(0, Matrix::zeros(0, 0)).shared(),
            v_a: Arc::new(ZeroScalar(2)),
            v_u: Arc::new(ZeroScalar(0)),
            v_n: FnVector::new(0, 2, |_| Vector::zeros(2), |_| Matrix::zeros(2, 0)).shared(),
        };
        let sys = pfl_system(&ps).unwrap();
        let q = dvector![0.1, 0.2];
        assert_eq!(sys.inertia.value(&q), Matrix::identity(2, 2));
        assert_eq!(sys.input_map.value(&q), Matrix::identity(2, 2));
        assert_eq!(sys.annihilator_at(&q).unwrap().shape(), (0, 2));
    }

    #[test]
    fn equilibrium_control_is_zero() {
        // ∇V_u vanishes at q_u = 0 and K_I = 0, so any q_a is an equilibrium.
        let (ps, mut g) = (coupled(), gains());
        g.k_i = dmatrix![0.0];
        let x = State::from_slices(&[0.4, 0.0, 0.0], &[0.0, 0.0, 0.0]);
        let v = donaire_control(&ps, &g, &x).unwrap();
        assert!(v.amax() < 1e-15);
    }

    #[test]
    fn singular_k_is_a_gain_error() {
        let ps = coupled();
        // k_e = 0, K_k = 0 gives K = 0.
        let g = GainSet::scalar(0.0, 1.0, -1.0, 0.0, 0.0, 1.0);
        let x = State::from_slices(&[0.0, 0.1, 0.1], &[0.1, 0.1, 0.1]);
        assert!(matches!(donaire_control(&ps, &g, &x), Err(Error::GainCondition(_))));
    }

    #[test]
    fn gain_validation() {
        assert!(gains().validate(1).is_ok());
        let mut g = gains();
        g.k_p = dmatrix![0.0];
        assert!(g.validate(1).is_err());
        let mut g = gains();
        g.k_k = dmatrix![-1.0];
        assert!(g.validate(1).is_err());
    }

    #[test]
    fn grid_covers_corners() {
        let b = GainBox {
            qu_lo: vec![-1.0, 0.0],
            qu_hi: vec![1.0, 2.0],
            points_per_axis: 3,
            q_star: Vector::zeros(3),
        };
        let grid = b.grid();
        assert_eq!(grid.len(), 9);
        assert!(grid.contains(&dvector![-1.0, 0.0]));
        assert!(grid.contains(&dvector![1.0, 2.0]));
        assert!(grid.contains(&dvector![0.0, 1.0]));
    }

    #[test]
    fn original_inertia_partials() {
        let ps = coupled();
        let sys = original_system(&ps).unwrap();
        let probes: Vec<Vector> = states().into_iter().map(|x| x.q).collect();
        let check = crate::fd::check_matrix_field(sys.inertia.as_ref(), &probes).unwrap();
        assert!(check.passes(crate::fd::ORACLE_RTOL));
    }
}
