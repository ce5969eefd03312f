use sidapbc::fd::{check_matrix_field, check_scalar_field, check_vector_field, ORACLE_RTOL};
use sidapbc::matching::{sida_matching_residual, stability_condition};
use sidapbc::pfl;
use sidapbc::sampling::residual_report;
use sidapbc::systems::cart_pendulum::{build, md_inv_field, CartPendulumParams};
use sidapbc::{linalg, State, Vector};

fn default_system() -> sidapbc::systems::cart_pendulum::CartPendulum {
    build(CartPendulumParams::default()).unwrap()
}

#[test]
fn explicit_control_equals_general_construction() {
    let cp = default_system();
    let g = cp.params.gains();
    let states = CartPendulumParams::probe_box().sample_states(100, 21).unwrap();
    for x in &states {
        let explicit = (cp.control)(x).unwrap();
        let general = pfl::donaire_control(&cp.partitioned, &g, x).unwrap();
        let scale = 1.0 + general.amax();
        assert!((&explicit - &general).amax() / scale < 1e-10, "{explicit} vs {general}");
    }
}

#[test]
fn explicit_lambda_equals_general_construction() {
    let cp = default_system();
    let g = cp.params.gains();
    for x in CartPendulumParams::probe_box().sample_states(100, 22).unwrap() {
        let a = (cp.lambda)(&x).unwrap();
        let b = pfl::donaire_lambda(&cp.partitioned, &g, &x).unwrap();
        assert!(linalg::max_abs(&(&a - &b)) / (1.0 + linalg::max_abs(&b)) < 1e-10);
    }
}

#[test]
fn explicit_target_equals_general_target() {
    let cp = default_system();
    let general = cp.general_target().unwrap();
    for x in CartPendulumParams::probe_box().sample_states(50, 23).unwrap() {
        let a = cp.target.md_inv(&x.q).unwrap();
        let b = general.md_inv(&x.q).unwrap();
        assert!(linalg::max_abs(&(a - b)) < 1e-9);
        let va = cp.target.vd.value(&x.q);
        let vb = general.vd.value(&x.q);
        assert!((va - vb).abs() < 1e-12 * (1.0 + vb.abs()));
    }
}

#[test]
fn matching_residual_over_probe_box() {
    let cp = default_system();
    let report = residual_report(&CartPendulumParams::probe_box(), 200, 1, |x| {
        sida_matching_residual(&cp.plant, cp.control.as_ref(), &cp.target, x)
    })
    .unwrap();
    assert!(report.passes(1e-8), "max residual {:e}", report.max_abs);
}

#[test]
fn stability_condition_holds() {
    let cp = default_system();
    for x in CartPendulumParams::probe_box().sample_states(200, 2).unwrap() {
        assert!(stability_condition(&cp.target, &x).unwrap().ok);
    }
}

#[test]
fn analytic_partials_pass_fd() {
    let cp = default_system();
    let probes = CartPendulumParams::probe_box().sample_configurations(100, 3).unwrap();
    let qu: Vec<Vector> = probes.iter().map(|q| Vector::from_element(1, q[1])).collect();
    let ps = &cp.partitioned;
    assert!(check_matrix_field(ps.m_au.as_ref(), &qu).unwrap().passes(ORACLE_RTOL));
    assert!(check_scalar_field(ps.v_u.as_ref(), &qu).unwrap().passes(ORACLE_RTOL));
    assert!(check_vector_field(ps.v_n.as_ref(), &qu).unwrap().passes(ORACLE_RTOL));
    assert!(check_matrix_field(md_inv_field(&cp.params).as_ref(), &probes).unwrap().passes(ORACLE_RTOL));
    assert!(check_matrix_field(cp.target.md.as_ref(), &probes).unwrap().passes(ORACLE_RTOL));
    assert!(check_scalar_field(cp.target.vd.as_ref(), &probes).unwrap().passes(ORACLE_RTOL));
    assert!(check_matrix_field(cp.plant.inertia.as_ref(), &probes).unwrap().passes(ORACLE_RTOL));
}

#[test]
fn flipped_damping_sign_breaks_matching() {
    let p = CartPendulumParams::default();
    let cp = build(p).unwrap();
    let flipped = CartPendulumParams { k_p: -p.k_p, ..p };
    let law = move |x: &State| flipped.control(x).map(|v| Vector::from_element(1, v));
    let report = residual_report(&CartPendulumParams::probe_box(), 200, 1, |x| {
        sida_matching_residual(&cp.plant, &law, &cp.target, x)
    })
    .unwrap();
    assert!(report.max_abs >= 1e-4);
}
