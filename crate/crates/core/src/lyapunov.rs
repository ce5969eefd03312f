//! Direct-Lyapunov designs for second-order systems that need not be
//! port-Hamiltonian:
//!
//! ```text
//! q̇ = ℳ⁻¹(q) 𝔭,   𝔭̇ = g(q) + f(q, 𝔭) + 𝒢 u,
//! ```
//!
//! with the candidate `H_d = ½ 𝔭ᵀ ℳ_d⁻¹ 𝔭 + 𝒱_d(q)`. Along solutions
//! `Ḣ_d = 𝔭ᵀ ℳ_d⁻¹ C` with
//!
//! ```text
//! C = g + f + 𝒢u + ½ ℳ_d ℳ⁻¹ ∇ᵀ_q[ℳ_d⁻¹𝔭] 𝔭 + ℳ_d ℳ⁻¹ ∇𝒱_d,
//! ```
//!
//! and writing `C = Λ ℳ_d⁻¹ 𝔭` turns the closed loop into the target form.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{MatrixField, SharedMatrix, SharedScalar, SharedVector};
use crate::linalg;
use crate::matching::sida_matching_residual;
use crate::system::{
    quadratic_form_gradient, SecondOrderPlant, State, StateMatrixMap, TargetDynamics,
};
use crate::{Matrix, Vector};

/// Momentum-dependent force `f(q, 𝔭)`.
pub type StateForce = Arc<dyn Fn(&State) -> Vector + Send + Sync>;

/// `q̇ = ℳ⁻¹𝔭`, `𝔭̇ = g(q) + f(q, 𝔭) + 𝒢(q) u`.
#[derive(Clone)]
pub struct GeneralSecondOrderSystem {
    pub n: usize,
    pub m: usize,
    pub mass: SharedMatrix,
    pub g_vec: SharedVector,
    pub f_vec: StateForce,
    pub input_map: SharedMatrix,
}

impl GeneralSecondOrderSystem {
    pub fn new(
        mass: SharedMatrix,
        g_vec: SharedVector,
        f_vec: StateForce,
        input_map: SharedMatrix,
    ) -> Result<Self> {
        let n = mass.dim();
        let (gr, m) = input_map.shape();
        if mass.shape() != (n, n) || g_vec.dim() != n || g_vec.len() != n || gr != n || input_map.dim() != n {
            return Err(Error::Dimension(format!(
                "mass {:?}, g over {} coords with {} entries, input map {:?}",
                mass.shape(),
                g_vec.dim(),
                g_vec.len(),
                input_map.shape()
            )));
        }
        Ok(GeneralSecondOrderSystem {
            n,
            m,
            mass,
            g_vec,
            f_vec,
            input_map,
        })
    }

    /// `ℳ ≻ 0` and `f(q, 0) = 0` at the probes.
    pub fn validate(&self, probes: &[Vector]) -> Result<()> {
        for q in probes {
            if !linalg::is_positive_definite(&self.mass.value(q)) {
                return Err(Error::InvalidArgument(format!(
                    "mass matrix not positive definite at {:?}",
                    q.as_slice()
                )));
            }
            let f0 = (self.f_vec)(&State::new(q.clone(), Vector::zeros(self.n)));
            if f0.amax() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "f(q, 0) = {f0} is not zero at {:?}",
                    q.as_slice()
                )));
            }
        }
        Ok(())
    }
}

impl SecondOrderPlant for GeneralSecondOrderSystem {
    fn dof(&self) -> usize {
        self.n
    }
    fn inputs(&self) -> usize {
        self.m
    }
    fn inertia_field(&self) -> &dyn MatrixField {
        self.mass.as_ref()
    }
    fn input_matrix(&self, q: &Vector) -> Matrix {
        self.input_map.value(q)
    }
    fn drift(&self, x: &State) -> Result<Vector> {
        Ok(self.g_vec.value(&x.q) + (self.f_vec)(x))
    }
}

/// `H_d = ½ 𝔭ᵀ ℳ_d⁻¹ 𝔭 + 𝒱_d(q)` with minimum at `q_star`.
#[derive(Clone)]
pub struct LyapunovCandidate {
    pub md: SharedMatrix,
    pub vd: SharedScalar,
    pub q_star: Vector,
}

impl LyapunovCandidate {
    /// Completes the candidate into target dynamics with force matrix `Λ`.
    pub fn with_lambda(&self, lambda: StateMatrixMap) -> TargetDynamics {
        TargetDynamics {
            md: self.md.clone(),
            vd: self.vd.clone(),
            lambda,
            q_star: self.q_star.clone(),
        }
    }

    fn zero_lambda(&self) -> TargetDynamics {
        let n = self.q_star.len();
        self.with_lambda(Arc::new(move |_| Ok(Matrix::zeros(n, n))))
    }

    pub fn validate(&self, probes: &[Vector], checked: Option<&[usize]>) -> Result<()> {
        self.zero_lambda().validate(probes, checked)
    }
}

/// `C = g + f + 𝒢u + ½ ℳ_d ℳ⁻¹ ∇ᵀ_q[ℳ_d⁻¹𝔭] 𝔭 + ℳ_d ℳ⁻¹ ∇𝒱_d`.
pub fn extract_c(
    sys: &GeneralSecondOrderSystem,
    cand: &LyapunovCandidate,
    u_law: &dyn Fn(&State) -> Result<Vector>,
    x: &State,
) -> Result<Vector> {
    let u = u_law(x)?;
    if u.len() != sys.m {
        return Err(Error::Dimension(format!(
            "control has {} entries, system has {} inputs",
            u.len(),
            sys.m
        )));
    }
    let tgt = cand.zero_lambda();
    let (_, md_inv_d) = tgt.md_inv_partials(&x.q)?;
    let m_inv = sys.inertia_inv(&x.q)?;
    let md = cand.md.value(&x.q);
    // ∇ᵀ_q[ℳ_d⁻¹𝔭] 𝔭 has entries 𝔭ᵀ(∂ᵢℳ_d⁻¹)𝔭.
    let shaped = quadratic_form_gradient(&md_inv_d, &x.p) * 0.5 + cand.vd.gradient(&x.q);
    Ok(sys.drift(x)? + sys.input_map.value(&x.q) * u + md * m_inv * shaped)
}

/// `Ḣ_d = 𝔭ᵀ ℳ_d⁻¹ C` along the closed loop.
pub fn lyap_hd_dot(
    sys: &GeneralSecondOrderSystem,
    cand: &LyapunovCandidate,
    u_law: &dyn Fn(&State) -> Result<Vector>,
    x: &State,
) -> Result<f64> {
    let c = extract_c(sys, cand, u_law, x)?;
    let z = cand.zero_lambda().md_inv(&x.q)? * &x.p;
    Ok(z.dot(&c))
}

/// `[g + f + 𝒢u] − [−ℳ_d ℳ⁻¹ ∇_q H_d + Λ ℳ_d⁻¹ 𝔭]`.
pub fn lyap_matching_residual(
    sys: &GeneralSecondOrderSystem,
    cand: &LyapunovCandidate,
    u_law: &dyn Fn(&State) -> Result<Vector>,
    lambda: &StateMatrixMap,
    x: &State,
) -> Result<Vector> {
    let tgt = cand.with_lambda(lambda.clone());
    sida_matching_residual(sys, u_law, &tgt, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstMatrix, FnVector, QuadraticScalar};
    use crate::matching::hd_dot_closed_loop;
    use nalgebra::{dmatrix, dvector};

    /// Damped pendulum-like plant with unit mass, `ℳ_d = 2I`, `𝒱_d = ½|q|²`.
    fn toy() -> (GeneralSecondOrderSystem, LyapunovCandidate) {
        let sys = GeneralSecondOrderSystem::new(
            ConstMatrix::new(2, Matrix::identity(2, 2)).shared(),
            FnVector::new(
                2,
                2,
                |q| dvector![-q[0].sin(), 0.0],
                |q| dmatrix![-q[0].cos(), 0.0; 0.0, 0.0],
            )
            .shared(),
            Arc::new(|x: &State| dvector![0.0, -0.3 * x.p[1]]),
            ConstMatrix::new(2, dmatrix![1.0; 0.0]).shared(),
        )
        .unwrap();
        let cand = LyapunovCandidate {
            md: ConstMatrix::new(2, Matrix::identity(2, 2) * 2.0).shared(),
            vd: Arc::new(QuadraticScalar {
                weight: Matrix::identity(2, 2),
                center: Vector::zeros(2),
            }),
            q_star: Vector::zeros(2),
        };
        (sys, cand)
    }

    #[test]
    fn zero_momentum_gives_zero_rate() {
        let (sys, cand) = toy();
        let u = |_: &State| Ok(dvector![0.7]);
        let x = State::from_slices(&[0.3, -0.2], &[0.0, 0.0]);
        assert_eq!(lyap_hd_dot(&sys, &cand, &u, &x).unwrap(), 0.0);
    }

    #[test]
    fn rate_matches_chain_rule() {
        let (sys, cand) = toy();
        let u = |x: &State| Ok(dvector![x.q[0].sin() - x.p[0]]);
        let tgt = cand.with_lambda(Arc::new(|_| Ok(Matrix::zeros(2, 2))));
        for x in crate::sampling::ProbeBox::symmetric(&[1.0, 1.0], &[1.0, 1.0])
            .sample_states(50, 5)
            .unwrap()
        {
            let a = lyap_hd_dot(&sys, &cand, &u, &x).unwrap();
            let b = hd_dot_closed_loop(&sys, &u, &tgt, &x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn c_is_linear_in_the_input() {
        let (sys, cand) = toy();
        let x = State::from_slices(&[0.3, -0.2], &[0.5, 0.1]);
        let c0 = extract_c(&sys, &cand, &|_| Ok(dvector![0.0]), &x).unwrap();
        let c1 = extract_c(&sys, &cand, &|_| Ok(dvector![0.25]), &x).unwrap();
        assert!((c1 - c0 - dvector![0.25, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn residual_is_c_minus_lambda_force() {
        let (sys, cand) = toy();
        let u = |x: &State| Ok(dvector![-x.p[0]]);
        let lambda: StateMatrixMap = Arc::new(|x: &State| Ok(dmatrix![0.0, x.p[0]; -x.p[0], -1.0]));
        let x = State::from_slices(&[0.3, -0.2], &[0.5, 0.1]);
        let c = extract_c(&sys, &cand, &u, &x).unwrap();
        let z = &x.p / 2.0;
        let r = lyap_matching_residual(&sys, &cand, &u, &lambda, &x).unwrap();
        assert!((r - (c - lambda(&x).unwrap() * z)).amax() < 1e-14);
    }

    #[test]
    fn validation_rejects_nonvanishing_force() {
        let (mut sys, _) = toy();
        assert!(sys.validate(&[dvector![0.1, 0.2]]).is_ok());
        sys.f_vec = Arc::new(|_| dvector![0.0, 1.0]);
        assert!(sys.validate(&[dvector![0.1, 0.2]]).is_err());
    }
}
