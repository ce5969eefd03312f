//! ODE integration of closed-loop and target dynamics, with energy monitors.
//!
//! Fixed-step classical RK4 is the default; an embedded Dormand–Prince 5(4)
//! pair with step control is available for stiff gains. A single integration
//! is sequential. [`simulate_batch`] runs independent initial conditions in
//! parallel.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::sida_matching_residual;
use crate::system::{target_field, SecondOrderPlant, State, TargetDynamics};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Rk4 { dt: f64 },
    Rk45 { rtol: f64, atol: f64, dt_min: f64, dt_max: f64 },
}

// `deny_unknown_fields` does not combine with `flatten`, so unknown keys here
// are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    pub t_end: f64,
    /// Record every `record_stride`-th accepted step. The initial and final
    /// states are always recorded.
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_end: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4 { dt },
            t_end,
            record_stride: 1,
        }
    }

    pub fn rk45(rtol: f64, atol: f64, t_end: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk45 {
                rtol,
                atol,
                dt_min: 1e-12,
                dt_max: 0.1,
            },
            t_end,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let ok = pos(self.t_end)
            && self.record_stride > 0
            && match self.method {
                Method::Rk4 { dt } => pos(dt),
                Method::Rk45 {
                    rtol,
                    atol,
                    dt_min,
                    dt_max,
                } => pos(rtol) && pos(atol) && pos(dt_min) && pos(dt_max) && dt_min <= dt_max,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid integrator config {self:?}")))
        }
    }
}

/// Raw output of [`integrate`]: flat state vectors at recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTrajectory {
    pub times: Vec<f64>,
    pub xs: Vec<Vector>,
}

fn checked_eval(f: &dyn Fn(&Vector) -> Result<Vector>, x: &Vector, t: f64, last: &Vector) -> Result<Vector> {
    let d = f(x)?;
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::Diverged {
            t,
            last: last.as_slice().to_vec(),
        })
    }
}

fn rk4_step(f: &dyn Fn(&Vector) -> Result<Vector>, x: &Vector, t: f64, h: f64) -> Result<Vector> {
    let k1 = checked_eval(f, x, t, x)?;
    let k2 = checked_eval(f, &(x + &k1 * (h / 2.0)), t, x)?;
    let k3 = checked_eval(f, &(x + &k2 * (h / 2.0)), t, x)?;
    let k4 = checked_eval(f, &(x + &k3 * h), t, x)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand–Prince coefficients.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step: (5th-order solution, scaled error norm).
fn dp_step(
    f: &dyn Fn(&Vector) -> Result<Vector>,
    x: &Vector,
    t: f64,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(Vector, f64)> {
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    for (s, row) in DP_A.iter().enumerate() {
        let mut xi = x.clone();
        for (j, kj) in k.iter().enumerate() {
            if row[j] != 0.0 {
                xi += kj * (h * row[j]);
            }
        }
        k.push(checked_eval(f, if s == 0 { x } else { &xi }, t, x)?);
    }
    let mut x5 = x.clone();
    let mut x4 = x.clone();
    for s in 0..7 {
        x5 += &k[s] * (h * DP_B5[s]);
        x4 += &k[s] * (h * DP_B4[s]);
    }
    let err = (0..x.len())
        .map(|i| {
            let sc = atol + rtol * x[i].abs().max(x5[i].abs());
            ((x5[i] - x4[i]) / sc).powi(2)
        })
        .sum::<f64>()
        / x.len().max(1) as f64;
    Ok((x5, err.sqrt()))
}

/// Integrates `ẋ = f(x)` from `x0` over `[0, t_end]`.
///
/// Aborts with [`Error::Diverged`] (carrying the last valid state) when a
/// derivative is not finite, and with [`Error::StepUnderflow`] when the
/// adaptive step falls below `dt_min`.
pub fn integrate(f: &dyn Fn(&Vector) -> Result<Vector>, x0: &Vector, cfg: &IntegratorConfig) -> Result<FlatTrajectory> {
    cfg.validate()?;
    let mut times = vec![0.0];
    let mut xs = vec![x0.clone()];
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut steps = 0usize;
    match cfg.method {
        Method::Rk4 { dt } => {
            let n = (cfg.t_end / dt).round().max(1.0) as usize;
            for i in 1..=n {
                let h = if i == n { cfg.t_end - t } else { dt };
                x = rk4_step(f, &x, t, h)?;
                t = if i == n { cfg.t_end } else { i as f64 * dt };
                if i % cfg.record_stride == 0 || i == n {
                    times.push(t);
                    xs.push(x.clone());
                }
            }
        }
        Method::Rk45 {
            rtol,
            atol,
            dt_min,
            dt_max,
        } => {
            let mut h = dt_max.min(cfg.t_end).min(1e-3_f64.max(dt_min));
            while t < cfg.t_end {
                let last = cfg.t_end - t <= h;
                let hs = if last { cfg.t_end - t } else { h };
                let (xn, err) = dp_step(f, &x, t, hs, rtol, atol)?;
                if err <= 1.0 {
                    x = xn;
                    t = if last { cfg.t_end } else { t + hs };
                    steps += 1;
                    if steps % cfg.record_stride == 0 || t >= cfg.t_end {
                        times.push(t);
                        xs.push(x.clone());
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (hs * factor).min(dt_max);
                if h < dt_min && t < cfg.t_end {
                    return Err(Error::StepUnderflow { t, h });
                }
            }
        }
    }
    Ok(FlatTrajectory { times, xs })
}

/// Monitors recorded alongside each state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSample {
    pub h_d: f64,
    pub hd_dot: f64,
    pub u: Vector,
    /// `∞`-norm of the full matching defect at this state.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub monitors: Vec<MonitorSample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&State> {
        self.states.last()
    }

    pub fn csv_header(n: usize, m: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("q_{i}")));
        cols.extend((1..=n).map(|i| format!("p_{i}")));
        cols.push("H_d".into());
        cols.push("Hd_dot".into());
        cols.extend((1..=m).map(|i| format!("u_{i}")));
        cols.push("residual_norm".into());
        cols.join(",")
    }

    /// Writes the trajectory as CSV. Floats use the shortest round-trip
    /// representation, so output is deterministic.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.dof());
        let m = self.monitors.first().map_or(0, |s| s.u.len());
        writeln!(w, "{}", Self::csv_header(n, m))?;
        for ((t, x), mon) in self.times.iter().zip(&self.states).zip(&self.monitors) {
            let mut row = vec![t.to_string()];
            row.extend(x.q.iter().chain(x.p.iter()).map(|v| v.to_string()));
            row.push(mon.h_d.to_string());
            row.push(mon.hd_dot.to_string());
            row.extend(mon.u.iter().map(|v| v.to_string()));
            row.push(mon.residual_norm.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates `plant` under `u_law`, recording `H_d`, `Ḣ_d`, `u` and the
/// matching defect against `tgt`.
pub fn simulate_closed_loop(
    plant: &dyn SecondOrderPlant,
    u_law: &(dyn Fn(&State) -> Result<Vector> + Sync),
    tgt: &TargetDynamics,
    x0: &State,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let n = plant.dof();
    let f = |v: &Vector| -> Result<Vector> {
        let x = State::from_flat(v);
        Ok(plant.rate(&x, &u_law(&x)?)?.to_flat())
    };
    let flat = integrate(&f, &x0.to_flat(), cfg)?;
    let mut states = Vec::with_capacity(flat.xs.len());
    let mut monitors = Vec::with_capacity(flat.xs.len());
    for v in &flat.xs {
        let x = State::from_flat(v);
        debug_assert_eq!(x.dof(), n);
        let u = u_law(&x)?;
        let r = plant.rate(&x, &u)?;
        let hd_dot = tgt.grad_q_hd(&x)?.dot(&r.q) + tgt.grad_p_hd(&x)?.dot(&r.p);
        let residual = sida_matching_residual(plant, u_law, tgt, &x)?;
        monitors.push(MonitorSample {
            h_d: tgt.hd(&x)?,
            hd_dot,
            u,
            residual_norm: residual.amax(),
        });
        states.push(x);
    }
    Ok(Trajectory {
        times: flat.times,
        states,
        monitors,
    })
}

/// Runs [`simulate_closed_loop`] from each initial condition in parallel.
/// Output order follows `x0s`.
pub fn simulate_batch(
    plant: &dyn SecondOrderPlant,
    u_law: &(dyn Fn(&State) -> Result<Vector> + Sync),
    tgt: &TargetDynamics,
    x0s: &[State],
    cfg: &IntegratorConfig,
) -> Vec<Result<Trajectory>> {
    use rayon::prelude::*;
    x0s.par_iter()
        .map(|x0| simulate_closed_loop(plant, u_law, tgt, x0, cfg))
        .collect()
}

/// Integrates the closed loop and the target vector field as one joint
/// system, so both see identical steps, and returns the largest `∞`-norm
/// state difference over all steps.
pub fn compare_with_target(
    plant: &dyn SecondOrderPlant,
    u_law: &(dyn Fn(&State) -> Result<Vector> + Sync),
    tgt: &TargetDynamics,
    x0: &State,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let dim = 2 * plant.dof();
    let f = |v: &Vector| -> Result<Vector> {
        let a = State::from_flat(&v.rows(0, dim).into_owned());
        let b = State::from_flat(&v.rows(dim, dim).into_owned());
        let ra = plant.rate(&a, &u_law(&a)?)?.to_flat();
        let rb = target_field(plant, tgt, &b)?.to_flat();
        let mut out = Vector::zeros(2 * dim);
        out.rows_mut(0, dim).copy_from(&ra);
        out.rows_mut(dim, dim).copy_from(&rb);
        Ok(out)
    };
    let flat0 = x0.to_flat();
    let mut joint = Vector::zeros(2 * dim);
    joint.rows_mut(0, dim).copy_from(&flat0);
    joint.rows_mut(dim, dim).copy_from(&flat0);
    let traj = integrate(&f, &joint, &cfg.with_stride(1))?;
    Ok(traj
        .xs
        .iter()
        .map(|v| (v.rows(0, dim) - v.rows(dim, dim)).amax())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Consecutive records where `H_d` rose by more than `1e-8(1 + |H_d|)`.
    pub violations: usize,
    /// Largest rise of `H_d` between consecutive records.
    pub max_increase: f64,
    /// Largest recorded `Ḣ_d`.
    pub max_hd_dot: f64,
}

pub const MONOTONICITY_TOL: f64 = 1e-8;

pub fn monotonicity_check(traj: &Trajectory) -> MonotonicityReport {
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    for w in traj.monitors.windows(2) {
        let rise = w[1].h_d - w[0].h_d;
        max_increase = max_increase.max(rise);
        if rise > MONOTONICITY_TOL * (1.0 + w[0].h_d.abs()) {
            violations += 1;
        }
    }
    MonotonicityReport {
        violations,
        max_increase,
        max_hd_dot: traj.monitors.iter().map(|m| m.hd_dot).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Convergence verdict over the final 10% of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    /// Largest monitored norm over the final 10%.
    pub tail_max: f64,
    /// Monitored norm at the final record.
    pub final_norm: f64,
}

pub const CONVERGENCE_TOL: f64 = 1e-3;

/// `|q − q*|` over `checked` coordinates (all when `None`) plus `|p|`.
pub fn monitored_norm(x: &State, q_star: &Vector, checked: Option<&[usize]>) -> f64 {
    let dq = match checked {
        Some(idx) => idx.iter().map(|&i| (x.q[i] - q_star[i]).powi(2)).sum::<f64>().sqrt(),
        None => (&x.q - q_star).norm(),
    };
    dq + x.p.norm()
}

/// Converged iff the monitored norm stays below `1e-3` for the final 10% of
/// the horizon.
pub fn convergence(traj: &Trajectory, q_star: &Vector, checked: Option<&[usize]>) -> Convergence {
    let Some(&t_end) = traj.times.last() else {
        return Convergence {
            converged: false,
            tail_max: f64::INFINITY,
            final_norm: f64::INFINITY,
        };
    };
    let tail_max = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= 0.9 * t_end)
        .map(|(_, x)| monitored_norm(x, q_star, checked))
        .fold(0.0, f64::max);
    let final_norm = monitored_norm(traj.states.last().unwrap(), q_star, checked);
    Convergence {
        converged: tail_max.is_finite() && tail_max < CONVERGENCE_TOL,
        tail_max,
        final_norm,
    }
}
