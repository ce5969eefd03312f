use std::sync::Arc;

use serde::Serialize;

use sidapbc::fd::{check_matrix_field, check_scalar_field, check_vector_field, ORACLE_RTOL};
use sidapbc::field::{FnMatrix, SharedMatrix};
use sidapbc::lyapunov::lyap_matching_residual;
use sidapbc::matching::{hd_dot_closed_loop, pde_count, sida_matching_residual, stability_condition, STABILITY_TOL};
use sidapbc::pfl;
use sidapbc::sampling::{residual_report, ProbeBox};
use sidapbc::sim::{
    convergence, monotonicity_check, simulate_closed_loop, IntegratorConfig, Trajectory, CONVERGENCE_TOL,
    MONOTONICITY_TOL,
};
use sidapbc::system::{ControlLaw, StateMatrixMap};
use sidapbc::systems::{ball_beam, cart_pendulum};
use sidapbc::{linalg, Matrix, SecondOrderPlant, State, TargetDynamics, Vector};

use crate::config::{ControlChoice, LoadedConfig, SystemParams};

pub const MATCHING_TOL: f64 = 1e-8;
pub const APPENDIX_LEMMA_TOL: f64 = 1e-10;
pub const APPENDIX_DELTA_TOL: f64 = 1e-9;
pub const ENERGY_RATE_TOL: f64 = 1e-9;
pub const DETERMINANT_TOL: f64 = 1e-12;

/// Every tolerance a report can refer to.
#[derive(Debug, Clone, Serialize)]
pub struct ToleranceLadder {
    pub matching: f64,
    pub appendix_lemma: f64,
    pub appendix_delta: f64,
    pub energy_rate: f64,
    pub stability: f64,
    pub determinant: f64,
    pub fd_oracle_rtol: f64,
    pub monotonicity: f64,
    pub convergence: f64,
}

pub fn tolerance_ladder() -> ToleranceLadder {
    ToleranceLadder {
        matching: MATCHING_TOL,
        appendix_lemma: APPENDIX_LEMMA_TOL,
        appendix_delta: APPENDIX_DELTA_TOL,
        energy_rate: ENERGY_RATE_TOL,
        stability: STABILITY_TOL,
        determinant: DETERMINANT_TOL,
        fd_oracle_rtol: ORACLE_RTOL,
        monotonicity: MONOTONICITY_TOL,
        convergence: CONVERGENCE_TOL,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Worst value seen; for "must be positive" checks, the smallest value.
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn at_most(name: &str, value: f64, tolerance: f64) -> Check {
    Check {
        name: name.into(),
        max_residual: value,
        tolerance,
        passed: value <= tolerance,
    }
}

fn flag(name: &str, value: f64, passed: bool) -> Check {
    Check {
        name: name.into(),
        max_residual: value,
        tolerance: 0.0,
        passed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub system: String,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub tolerances: ToleranceLadder,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// One example instance, erased to what the commands need.
struct Instance {
    name: &'static str,
    plant: Box<dyn SecondOrderPlant>,
    control: ControlLaw,
    target: TargetDynamics,
    probe_box: ProbeBox,
    x0: State,
    integrator: IntegratorConfig,
    checked: Option<Vec<usize>>,
}

fn scaled(field: SharedMatrix, factor: f64) -> SharedMatrix {
    if factor == 1.0 {
        return field;
    }
    let (a, b) = (field.clone(), field.clone());
    FnMatrix::new(field.dim(), field.shape(), move |q| a.value(q) * factor, move |q, i| b.partial(q, i) * factor).shared()
}

fn scaled_lambda(lambda: StateMatrixMap, factor: f64) -> StateMatrixMap {
    if factor == 1.0 {
        return lambda;
    }
    Arc::new(move |x: &State| lambda(x).map(|m: Matrix| m * factor))
}

fn instance(cfg: &LoadedConfig) -> sidapbc::Result<Instance> {
    let c = &cfg.config;
    let mut inst = match cfg.params {
        SystemParams::CartPendulum(p) => {
            let cp = cart_pendulum::build(p)?;
            Instance {
                name: "cart_pendulum",
                plant: Box::new(cp.plant),
                control: cp.control,
                target: cp.target,
                probe_box: cart_pendulum::CartPendulumParams::probe_box(),
                x0: State::from_slices(&[0.0, 0.3], &[0.0, 0.0]),
                integrator: IntegratorConfig::rk4(1e-3, 40.0).with_stride(10),
                checked: Some(cart_pendulum::CHECKED_COORDS.to_vec()),
            }
        }
        SystemParams::BallBeam(p) => {
            let bb = ball_beam::build(p)?;
            let target = bb.target();
            Instance {
                name: "ball_beam",
                plant: Box::new(bb.system),
                control: bb.control,
                target,
                probe_box: ball_beam::BallBeamParams::probe_box(),
                x0: State::from_slices(&[0.0, 0.2], &[0.0, 0.0]),
                integrator: IntegratorConfig::rk4(1e-2, 100.0),
                checked: None,
            }
        }
    };
    inst.target.md = scaled(inst.target.md.clone(), c.perturb.md_scale);
    inst.target.lambda = scaled_lambda(inst.target.lambda.clone(), c.perturb.lambda_scale);
    if c.control == ControlChoice::Zero {
        let m = inst.plant.inputs();
        inst.control = Arc::new(move |_: &State| Ok(Vector::zeros(m)));
    }
    if let Some(bx) = &c.probe_box {
        inst.probe_box = bx.clone();
    }
    if let Some(x) = &c.initial_state {
        inst.x0 = State::from_slices(&x.q, &x.p);
    }
    if let Some(ic) = c.integrator {
        inst.integrator = ic;
    }
    Ok(inst)
}

fn fd_check(name: &str, result: sidapbc::Result<sidapbc::fd::DerivativeCheck>) -> Check {
    match result {
        Ok(c) => at_most(name, c.max_error, ORACLE_RTOL),
        Err(_) => flag(name, f64::NAN, false),
    }
}

fn cart_checks(cfg: &LoadedConfig, p: cart_pendulum::CartPendulumParams, inst: &Instance) -> sidapbc::Result<Vec<Check>> {
    let c = &cfg.config;
    let cp = cart_pendulum::build(p)?;
    let g = p.gains();
    let mut checks = Vec::new();
    let gains = cp.gain_report()?;
    for cond in gains.conditions() {
        checks.push(flag(&format!("gain_{}", cond.name), cond.worst_value, cond.passed));
    }
    let (signs_ok, k_max) = p.sign_conditions(1.0, 201);
    checks.push(flag("gain_sign_conditions", k_max, signs_ok));

    let states = inst.probe_box.sample_states(c.samples, c.seed)?;
    let (mut lemma, mut delta, mut rate) = (0.0f64, 0.0f64, 0.0f64);
    for x in &states {
        let qu = Vector::from_element(1, x.q[1]);
        lemma = lemma.max(linalg::max_abs(&pfl::appendix_lemma_check(&cp.partitioned, &g, &qu)?));
        delta = delta.max(pfl::appendix_delta_identity(&cp.partitioned, &g, x)?.abs());
        let hd_dot = hd_dot_closed_loop(inst.plant.as_ref(), inst.control.as_ref(), &inst.target, x)?;
        let y = inst.plant.input_matrix(&x.q).transpose() * inst.target.md_inv(&x.q)? * &x.p;
        rate = rate.max((hd_dot + p.k_p * y.norm_squared()).abs());
    }
    checks.push(at_most("appendix_lemma", lemma, APPENDIX_LEMMA_TOL));
    checks.push(at_most("appendix_delta_identity", delta, APPENDIX_DELTA_TOL));
    checks.push(at_most("energy_rate_equals_damping", rate, ENERGY_RATE_TOL));

    let probes = inst.probe_box.sample_configurations(100, c.seed)?;
    let qu: Vec<Vector> = probes.iter().map(|q| Vector::from_element(1, q[1])).collect();
    let ps = &cp.partitioned;
    checks.push(fd_check("fd_m_au", check_matrix_field(ps.m_au.as_ref(), &qu)));
    checks.push(fd_check("fd_v_u", check_scalar_field(ps.v_u.as_ref(), &qu)));
    checks.push(fd_check("fd_v_n", check_vector_field(ps.v_n.as_ref(), &qu)));
    checks.push(fd_check("fd_md_inv", check_matrix_field(cart_pendulum::md_inv_field(&p).as_ref(), &probes)));
    checks.push(fd_check("fd_vd", check_scalar_field(cp.target.vd.as_ref(), &probes)));
    Ok(checks)
}

fn ball_checks(cfg: &LoadedConfig, p: ball_beam::BallBeamParams, inst: &Instance) -> sidapbc::Result<Vec<Check>> {
    let c = &cfg.config;
    let bb = ball_beam::build(p)?;
    let mut checks = Vec::new();
    let states = inst.probe_box.sample_states(c.samples, c.seed)?;
    let (mut det, mut min_eig) = (0.0f64, f64::INFINITY);
    for x in &states {
        let d = ball_beam::pd_decomposition(&p, x);
        det = det.max((d.det_first - p.eps).abs());
        min_eig = min_eig.min(d.min_eig);
    }
    checks.push(at_most("determinant_equals_eps", det, DETERMINANT_TOL));
    checks.push(flag("damping_bracket_pd", min_eig, min_eig > 0.0));
    let probes = inst.probe_box.sample_configurations(100, c.seed)?;
    checks.push(fd_check("fd_mass", check_matrix_field(bb.system.mass.as_ref(), &probes)));
    checks.push(fd_check("fd_g", check_vector_field(bb.system.g_vec.as_ref(), &probes)));
    checks.push(fd_check("fd_md", check_matrix_field(bb.candidate.md.as_ref(), &probes)));
    checks.push(fd_check("fd_vd", check_scalar_field(bb.candidate.vd.as_ref(), &probes)));
    Ok(checks)
}

/// Runs every check registered for the configured system.
pub fn cmd_verify(cfg: &LoadedConfig) -> sidapbc::Result<VerifyReport> {
    let c = &cfg.config;
    let inst = instance(cfg)?;
    let mut checks = Vec::new();

    let matching = match cfg.params {
        SystemParams::CartPendulum(_) => residual_report(&inst.probe_box, c.samples, c.seed, |x| {
            sida_matching_residual(inst.plant.as_ref(), inst.control.as_ref(), &inst.target, x)
        })?,
        SystemParams::BallBeam(p) => {
            let bb = ball_beam::build(p)?;
            let cand = sidapbc::lyapunov::LyapunovCandidate {
                md: inst.target.md.clone(),
                ..bb.candidate.clone()
            };
            residual_report(&inst.probe_box, c.samples, c.seed, |x| {
                lyap_matching_residual(&bb.system, &cand, inst.control.as_ref(), &inst.target.lambda, x)
            })?
        }
    };
    checks.push(at_most("matching_residual", matching.max_abs, MATCHING_TOL));

    let mut worst_stability = f64::NEG_INFINITY;
    for x in inst.probe_box.sample_states(c.samples, c.seed)? {
        worst_stability = worst_stability.max(stability_condition(&inst.target, &x)?.value);
    }
    checks.push(at_most("stability_condition", worst_stability, STABILITY_TOL));

    let vd_ok = sidapbc::system::vd_minimum_stats(inst.target.vd.as_ref(), &inst.target.q_star, inst.checked.as_deref())?;
    checks.push(flag(
        "vd_strict_minimum",
        vd_ok.1,
        vd_ok.0 <= sidapbc::system::VD_GRADIENT_TOL && vd_ok.1 > 0.0,
    ));

    checks.extend(match cfg.params {
        SystemParams::CartPendulum(p) => cart_checks(cfg, p, &inst)?,
        SystemParams::BallBeam(p) => ball_checks(cfg, p, &inst)?,
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        system: inst.name.into(),
        config_hash: cfg.hash.clone(),
        seed: c.seed,
        samples: c.samples,
        tolerances: tolerance_ladder(),
        checks,
        passed,
    })
}

/// `State` with plain arrays, for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateRecord {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl From<&State> for StateRecord {
    fn from(x: &State) -> Self {
        StateRecord {
            q: x.q.as_slice().to_vec(),
            p: x.p.as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub system: String,
    pub config_hash: String,
    pub seed: u64,
    pub tolerances: ToleranceLadder,
    pub integrator: IntegratorConfig,
    pub initial_state: StateRecord,
    pub final_state: StateRecord,
    pub converged: bool,
    pub tail_max_norm: f64,
    pub final_norm: f64,
    pub monotonicity_violations: usize,
    pub max_hd_increase: f64,
    pub h_d_initial: f64,
    pub h_d_final: f64,
    /// Largest change of the plant energy `H` along the run; reported for
    /// port-Hamiltonian plants only.
    pub plant_energy_drift: Option<f64>,
    pub records: usize,
}

pub fn cmd_simulate(cfg: &LoadedConfig) -> sidapbc::Result<(Trajectory, SimulationSummary)> {
    let inst = instance(cfg)?;
    let traj = simulate_closed_loop(inst.plant.as_ref(), inst.control.as_ref(), &inst.target, &inst.x0, &inst.integrator)?;
    let conv = convergence(&traj, &inst.target.q_star, inst.checked.as_deref());
    let mono = monotonicity_check(&traj);
    let plant_energy_drift = match cfg.params {
        SystemParams::CartPendulum(p) => {
            let plant = cart_pendulum::build(p)?.plant;
            let h0 = plant.hamiltonian(&traj.states[0])?;
            let mut drift = 0.0f64;
            for x in &traj.states {
                drift = drift.max((plant.hamiltonian(x)? - h0).abs());
            }
            Some(drift)
        }
        SystemParams::BallBeam(_) => None,
    };
    let summary = SimulationSummary {
        system: inst.name.into(),
        config_hash: cfg.hash.clone(),
        seed: cfg.config.seed,
        tolerances: tolerance_ladder(),
        integrator: inst.integrator,
        initial_state: (&inst.x0).into(),
        final_state: traj.final_state().unwrap_or(&inst.x0).into(),
        converged: conv.converged,
        tail_max_norm: conv.tail_max,
        final_norm: conv.final_norm,
        monotonicity_violations: mono.violations,
        max_hd_increase: mono.max_increase,
        h_d_initial: traj.monitors.first().map_or(f64::NAN, |m| m.h_d),
        h_d_final: traj.monitors.last().map_or(f64::NAN, |m| m.h_d),
        plant_energy_drift,
        records: traj.len(),
    };
    Ok((traj, summary))
}

/// `s(s+1)(s+2)/6`.
pub fn cmd_count_pdes(s: u64) -> u64 {
    pde_count(s)
}
