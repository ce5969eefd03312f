//! Inverted pendulum on a cart.
//!
//! `q = (q_a, q_u)`: cart position and pendulum angle from the upright.
//! Original plant: `M = [[M_c + m, mℓ cos q_u], [mℓ cos q_u, mℓ²]]`,
//! `V = mgℓ cos q_u`, `G = (1, 0)`. After partial feedback linearization the
//! blocks are `m_au = mℓ cos q_u`, `m_uu = mℓ²`, `V_u = mgℓ cos q_u` and
//! `V_N = −mℓ sin q_u`; momentum is `p = M̃ q̇`, so `p_u = mℓ² q̇_u`.
//!
//! The controller uses `k_a = 1`, `K_I = 0`, which gives
//!
//! ```text
//! K(q_u)  = k_e + K_k + k_u K_k m cos²q_u
//! v       = (1/K)[−k_u K_k m sin q_u (p_u²/(m²ℓ³) − g cos q_u)] − K_P K (p_a − (k_u/ℓ) cos q_u p_u)
//! V_d     = k_e k_u mgℓ cos q_u
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ConstMatrix, FnMatrix, FnScalar, FnVector, InverseField, SharedMatrix, ZeroScalar};
use crate::linalg;
use crate::pfl::{self, GainBox, GainReport, GainSet, PartitionedSystem};
use crate::sampling::ProbeBox;
use crate::system::{ControlLaw, MechanicalSystem, State, StateMatrixMap, TargetDynamics};
use crate::{Matrix, Vector};

/// Physical parameters and gains. `k_a = 1` and `K_I = 0` are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPendulumParams {
    /// Cart mass `M_c` (kg). Only enters the original plant.
    pub cart_mass: f64,
    /// Pendulum mass `m` (kg).
    pub mass: f64,
    /// Pendulum length `ℓ` (m).
    pub length: f64,
    /// Gravity `g` (m/s²).
    pub gravity: f64,
    pub k_e: f64,
    pub k_u: f64,
    pub k_k: f64,
    pub k_p: f64,
}

impl Default for CartPendulumParams {
    /// Desk gains: validated on `q_u ∈ [−1, 1]` by [`pfl::gain_condition_check`]
    /// and chosen by the search in [`search_gains`].
    fn default() -> Self {
        CartPendulumParams {
            cart_mass: 1.0,
            mass: 0.2,
            length: 0.5,
            gravity: 9.81,
            k_e: 1.0,
            k_u: -40.0,
            k_k: 1.0,
            k_p: 0.05,
        }
    }
}

impl CartPendulumParams {
    pub fn validate(&self) -> Result<()> {
        let physical = [self.cart_mass, self.mass, self.length, self.gravity];
        if !physical.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidArgument(
                "cart-pendulum physical parameters must be positive".into(),
            ));
        }
        self.gains().validate(1)
    }

    pub fn gains(&self) -> GainSet {
        GainSet::scalar(self.k_e, 1.0, self.k_u, self.k_k, 0.0, self.k_p)
    }

    /// `K(q_u) = k_e + K_k + k_u K_k m cos²q_u`.
    pub fn k_of(&self, qu: f64) -> f64 {
        self.k_e + self.k_k + self.k_u * self.k_k * self.mass * qu.cos().powi(2)
    }

    /// Sign conditions `k_e > 0`, `k_u < 0`, `k_e + K_k > 0` and `K(q_u) < 0`
    /// on `[−bound, bound]` (checked on `points` grid nodes). Returns the
    /// largest `K` found.
    pub fn sign_conditions(&self, bound: f64, points: usize) -> (bool, f64) {
        let k_max = (0..points.max(2))
            .map(|i| -bound + 2.0 * bound * i as f64 / (points.max(2) - 1) as f64)
            .map(|qu| self.k_of(qu))
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = self.k_e > 0.0 && self.k_u < 0.0 && self.k_e + self.k_k > 0.0 && k_max < 0.0;
        (ok, k_max)
    }

    /// Explicit `M_d⁻¹(q_u)`.
    pub fn md_inv(&self, qu: f64) -> Matrix {
        let (m, l) = (self.mass, self.length);
        let c = qu.cos();
        let off = -self.k_u * self.k_k * c / l;
        Matrix::from_row_slice(
            2,
            2,
            &[
                self.k_e + self.k_k,
                off,
                off,
                self.k_e * self.k_u / (m * l * l) + self.k_u * self.k_u * self.k_k * c * c / (l * l),
            ],
        )
    }

    fn md_inv_dqu(&self, qu: f64) -> Matrix {
        let l = self.length;
        let (s, c) = qu.sin_cos();
        let off = self.k_u * self.k_k * s / l;
        Matrix::from_row_slice(
            2,
            2,
            &[0.0, off, off, -2.0 * self.k_u * self.k_u * self.k_k * c * s / (l * l)],
        )
    }

    /// Explicit outer-loop control.
    pub fn control(&self, x: &State) -> Result<f64> {
        let (m, l, g) = (self.mass, self.length, self.gravity);
        let qu = x.q[1];
        let (s, c) = qu.sin_cos();
        let k = self.k_of(qu);
        if k == 0.0 {
            return Err(Error::GainCondition(format!("K(q_u) = 0 at q_u = {qu}")));
        }
        let (pa, pu) = (x.p[0], x.p[1]);
        let shaping = -self.k_u * self.k_k * m * s * (pu * pu / (m * m * l * l * l) - g * c) / k;
        Ok(shaping - self.k_p * k * (pa - self.k_u / l * c * pu))
    }

    /// Explicit force matrix
    /// `Λ = ½ M_d [[0, −2σ p_u], [σ p_u, σ p_a]] M_d − G̃ K_P G̃ᵀ`,
    /// `σ = k_u K_k sin q_u / (mℓ³)`.
    pub fn lambda(&self, x: &State) -> Result<Matrix> {
        let (m, l) = (self.mass, self.length);
        let qu = x.q[1];
        let sigma = self.k_u * self.k_k * qu.sin() / (m * l.powi(3));
        let inner = Matrix::from_row_slice(
            2,
            2,
            &[0.0, -2.0 * sigma * x.p[1], sigma * x.p[1], sigma * x.p[0]],
        );
        let md = linalg::inverse_at(&self.md_inv(qu), "target inertia M_d", &x.q)?;
        let gt = self.g_tilde(qu);
        Ok(&md * inner * &md * 0.5 - &gt * gt.transpose() * self.k_p)
    }

    /// `G̃ = (1, −mℓ cos q_u)`.
    pub fn g_tilde(&self, qu: f64) -> Matrix {
        Matrix::from_column_slice(2, 1, &[1.0, -self.mass * self.length * qu.cos()])
    }

    /// Default sampling box: `|q_a| ≤ 2`, `|q_u| ≤ 1`, `|p| ≤ 2`.
    pub fn probe_box() -> ProbeBox {
        ProbeBox::symmetric(&[2.0, 1.0], &[2.0, 2.0])
    }

    /// Grid used to validate the gains: `q_u ∈ [−1, 1]`, equilibrium at the
    /// origin.
    pub fn gain_box() -> GainBox {
        GainBox {
            qu_lo: vec![-1.0],
            qu_hi: vec![1.0],
            points_per_axis: 201,
            q_star: Vector::zeros(2),
        }
    }
}

/// Everything built from one parameter set.
#[derive(Clone)]
pub struct CartPendulum {
    pub params: CartPendulumParams,
    pub partitioned: PartitionedSystem,
    /// Post-linearization plant.
    pub plant: MechanicalSystem,
    /// Target from the explicit `M_d⁻¹`, `V_d` and `Λ`.
    pub target: TargetDynamics,
    /// Explicit control law.
    pub control: ControlLaw,
    pub lambda: StateMatrixMap,
}

/// Coordinates whose equilibrium value is fixed; `q_a` is free when `K_I = 0`.
pub const CHECKED_COORDS: [usize; 1] = [1];

pub fn partitioned(p: &CartPendulumParams) -> PartitionedSystem {
    let (m, l, g) = (p.mass, p.length, p.gravity);
    PartitionedSystem {
        m: 1,
        s: 1,
        m_aa: Matrix::from_element(1, 1, p.cart_mass + m),
        m_au: FnMatrix::new(
            1,
            (1, 1),
            move |q| Matrix::from_element(1, 1, m * l * q[0].cos()),
            move |q, _| Matrix::from_element(1, 1, -m * l * q[0].sin()),
        )
        .shared(),
        m_uu: ConstMatrix::new(1, Matrix::from_element(1, 1, m * l * l)).shared(),
        v_a: Arc::new(ZeroScalar(1)),
        v_u: FnScalar::new(
            1,
            move |q| m * g * l * q[0].cos(),
            move |q| Vector::from_element(1, -m * g * l * q[0].sin()),
        )
        .shared(),
        v_n: FnVector::new(
            1,
            1,
            move |q| Vector::from_element(1, -m * l * q[0].sin()),
            move |q| Matrix::from_element(1, 1, -m * l * q[0].cos()),
        )
        .shared(),
    }
}

/// Explicit `M_d⁻¹` as a field over `(q_a, q_u)`.
pub fn md_inv_field(p: &CartPendulumParams) -> SharedMatrix {
    let (a, b) = (*p, *p);
    FnMatrix::new(
        2,
        (2, 2),
        move |q| a.md_inv(q[1]),
        move |q, i| {
            if i == 0 {
                Matrix::zeros(2, 2)
            } else {
                b.md_inv_dqu(q[1])
            }
        },
    )
    .shared()
}

pub fn build(p: CartPendulumParams) -> Result<CartPendulum> {
    p.validate()?;
    let ps = partitioned(&p);
    let plant = pfl::pfl_system(&ps)?;
    let k = p.k_e * p.k_u * p.mass * p.gravity * p.length;
    let vd = FnScalar::new(
        2,
        move |q| k * q[1].cos(),
        move |q| Vector::from_vec(vec![0.0, -k * q[1].sin()]),
    )
    .shared();
    let lambda: StateMatrixMap = Arc::new(move |x: &State| p.lambda(x));
    let target = TargetDynamics {
        md: InverseField::new(md_inv_field(&p)).shared(),
        vd,
        lambda: lambda.clone(),
        q_star: Vector::zeros(2),
    };
    let control: ControlLaw = Arc::new(move |x: &State| p.control(x).map(|v| Vector::from_element(1, v)));
    Ok(CartPendulum {
        params: p,
        partitioned: ps,
        plant,
        target,
        control,
        lambda,
    })
}

impl CartPendulum {
    /// Target assembled by the general construction instead of the explicit
    /// formulas.
    pub fn general_target(&self) -> Result<TargetDynamics> {
        pfl::pfl_target(&self.partitioned, &self.params.gains(), Vector::zeros(2))
    }

    /// Original (pre-linearization) plant.
    pub fn original_plant(&self) -> Result<MechanicalSystem> {
        pfl::original_system(&self.partitioned)
    }

    pub fn gain_report(&self) -> Result<GainReport> {
        pfl::gain_condition_check(&self.partitioned, &self.params.gains(), &CartPendulumParams::gain_box())
    }
}

/// One point of the gain search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCandidate {
    pub k_u: f64,
    pub k_p: f64,
    pub gains_valid: bool,
    pub converged: bool,
    /// Final value of `|q_u| + |p|`.
    pub final_norm: f64,
    pub monotonicity_violations: usize,
}

/// Grid search over `(k_u, K_P)` with the other parameters of `base` fixed.
///
/// A candidate is accepted when [`CartPendulum::gain_report`] and the sign
/// conditions pass on `q_u ∈ [−1, 1]` and the closed loop from
/// `(q_u, p) = (0.3, 0)` is classified converged over `horizon` seconds with
/// no `H_d` increase. Candidates are evaluated in parallel; the output
/// order follows the input grid.
pub fn search_gains(
    base: CartPendulumParams,
    k_u_grid: &[f64],
    k_p_grid: &[f64],
    horizon: f64,
) -> Vec<GainCandidate> {
    use rayon::prelude::*;
    let pairs: Vec<(f64, f64)> = k_u_grid
        .iter()
        .flat_map(|&ku| k_p_grid.iter().map(move |&kp| (ku, kp)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(k_u, k_p)| evaluate_candidate(CartPendulumParams { k_u, k_p, ..base }, horizon))
        .collect()
}

fn evaluate_candidate(p: CartPendulumParams, horizon: f64) -> GainCandidate {
    let failed = GainCandidate {
        k_u: p.k_u,
        k_p: p.k_p,
        gains_valid: false,
        converged: false,
        final_norm: f64::INFINITY,
        monotonicity_violations: 0,
    };
    let Ok(cp) = build(p) else { return failed };
    let valid = cp.gain_report().map(|r| r.passed()).unwrap_or(false) && p.sign_conditions(1.0, 201).0;
    if !valid {
        return failed;
    }
    let cfg = crate::sim::IntegratorConfig::rk4(1e-2, horizon);
    let x0 = State::from_slices(&[0.0, 0.3], &[0.0, 0.0]);
    match crate::sim::simulate_closed_loop(&cp.plant, cp.control.as_ref(), &cp.target, &x0, &cfg) {
        Ok(traj) => {
            let conv = crate::sim::convergence(&traj, &cp.target.q_star, Some(&CHECKED_COORDS));
            GainCandidate {
                gains_valid: true,
                converged: conv.converged,
                final_norm: conv.final_norm,
                monotonicity_violations: crate::sim::monotonicity_check(&traj).violations,
                ..failed
            }
        }
        Err(_) => GainCandidate {
            gains_valid: true,
            ..failed
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_at_upright() {
        let p = CartPendulumParams::default();
        assert!((p.k_of(0.0) - (p.k_e + p.k_k + p.k_u * p.k_k * p.mass)).abs() < 1e-15);
        let k = pfl::k_matrix(&partitioned(&p), &p.gains(), &Vector::from_element(1, 0.0)).unwrap();
        assert!((k[(0, 0)] - p.k_of(0.0)).abs() < 1e-12);
    }

    #[test]
    fn md_inv_at_upright() {
        let p = CartPendulumParams::default();
        let (m, l) = (p.mass, p.length);
        let expect = Matrix::from_row_slice(
            2,
            2,
            &[
                p.k_e + p.k_k,
                -p.k_u * p.k_k / l,
                -p.k_u * p.k_k / l,
                p.k_e * p.k_u / (m * l * l) + p.k_u * p.k_u * p.k_k / (l * l),
            ],
        );
        assert!(linalg::max_abs(&(p.md_inv(0.0) - &expect)) < 1e-12);
        let general = pfl::md_inv_pfl(&partitioned(&p), &p.gains(), &Vector::zeros(2)).unwrap();
        assert!(linalg::max_abs(&(general - expect)) < 1e-10);
    }

    #[test]
    fn v_n_jacobian_is_minus_coupling() {
        let p = CartPendulumParams::default();
        let ps = partitioned(&p);
        let probes: Vec<Vector> = (-10..=10).map(|i| Vector::from_element(1, 0.15 * i as f64)).collect();
        assert!(ps.structure_defects(&probes).passes(1e-14));
    }

    #[test]
    fn desk_gains_pass_conditions() {
        let p = CartPendulumParams::default();
        let cp = build(p).unwrap();
        let r = cp.gain_report().unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(p.sign_conditions(1.0, 201).0);
    }

    #[test]
    fn negative_k_e_breaks_the_minimum() {
        let p = CartPendulumParams {
            k_e: -1.0,
            ..Default::default()
        };
        let cp = build(p).unwrap();
        let r = cp.gain_report().unwrap();
        assert!(!r.vd_minimum.passed);
    }

    #[test]
    fn weak_k_u_makes_k_singular_inside_the_box() {
        // K changes sign near |q_u| = 1 when k_u is too small in magnitude.
        let p = CartPendulumParams {
            k_u: -20.0,
            ..Default::default()
        };
        let r = build(p).unwrap().gain_report().unwrap();
        assert!(!r.det_k.passed);
        assert!(r.det_k.worst_at[0].abs() > 0.5);
    }
}
