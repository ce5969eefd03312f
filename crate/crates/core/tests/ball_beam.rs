use sidapbc::lyapunov::{extract_c, lyap_hd_dot, lyap_matching_residual};
use sidapbc::matching::stability_condition;
use sidapbc::sampling::residual_report;
use sidapbc::systems::ball_beam::{build, pd_decomposition, BallBeamParams, CuVariant};
use sidapbc::{linalg, State, Vector};

#[test]
fn matching_residual_over_probe_box() {
    let bb = build(BallBeamParams::default()).unwrap();
    let r = residual_report(&BallBeamParams::probe_box(), 200, 7, |x| {
        lyap_matching_residual(&bb.system, &bb.candidate, bb.control.as_ref(), &bb.lambda, x)
    })
    .unwrap();
    assert!(r.passes(1e-8), "{:e}", r.max_abs);
}

#[test]
fn c_equals_lambda_force() {
    let bb = build(BallBeamParams::default()).unwrap();
    for x in BallBeamParams::probe_box().sample_states(100, 8).unwrap() {
        let c = extract_c(&bb.system, &bb.candidate, bb.control.as_ref(), &x).unwrap();
        let z = bb.target().md_inv(&x.q).unwrap() * &x.p;
        assert!((c - (bb.lambda)(&x).unwrap() * z).amax() < 1e-9);
    }
}

#[test]
fn energy_rate_is_nonpositive_and_matches_stability_value() {
    let bb = build(BallBeamParams::default()).unwrap();
    let tgt = bb.target();
    for x in BallBeamParams::probe_box().sample_states(200, 9).unwrap() {
        let rate = lyap_hd_dot(&bb.system, &bb.candidate, bb.control.as_ref(), &x).unwrap();
        let s = stability_condition(&tgt, &x).unwrap();
        assert!(rate <= 1e-12);
        assert!((rate - s.value).abs() < 1e-10);
    }
}

#[test]
fn rate_vanishes_only_with_the_damping_form() {
    let bb = build(BallBeamParams::default()).unwrap();
    let x = State::from_slices(&[0.4, -0.3], &[0.0, 0.0]);
    assert_eq!(lyap_hd_dot(&bb.system, &bb.candidate, bb.control.as_ref(), &x).unwrap(), 0.0);
    let x = State::from_slices(&[0.4, -0.3], &[0.1, 0.0]);
    assert!(lyap_hd_dot(&bb.system, &bb.candidate, bb.control.as_ref(), &x).unwrap() < 0.0);
}

#[test]
fn equilibrium_needs_no_control() {
    let bb = build(BallBeamParams::default()).unwrap();
    assert_eq!((bb.control)(&State::zeros(2)).unwrap(), Vector::zeros(1));
}

#[test]
fn printed_cu_variant_leaves_a_residual() {
    let bb = build(BallBeamParams {
        cu_variant: CuVariant::PrintedQa,
        ..Default::default()
    })
    .unwrap();
    let r = residual_report(&BallBeamParams::probe_box(), 200, 7, |x| {
        lyap_matching_residual(&bb.system, &bb.candidate, bb.control.as_ref(), &bb.lambda, x)
    })
    .unwrap();
    assert!(r.max_abs > 1e-3);
}

#[test]
fn perturbed_damping_coefficient_breaks_matching() {
    let bb = build(BallBeamParams::default()).unwrap();
    let other = BallBeamParams {
        delta: 1.01,
        ..Default::default()
    };
    let law = move |x: &State| Ok(Vector::from_element(1, other.control(x)));
    let x = State::from_slices(&[0.2, 0.1], &[0.5, 0.0]);
    let r = lyap_matching_residual(&bb.system, &bb.candidate, &law, &bb.lambda, &x).unwrap();
    assert!(r.amax() > 1e-4);
}

#[test]
fn bracket_positive_definite_for_many_parameters() {
    for (eps, delta, kp) in [(0.1, 0.5, 0.1), (1.0, 1.0, 1.0), (3.0, 0.2, 5.0)] {
        let p = BallBeamParams {
            eps,
            delta,
            k_p: kp,
            ..Default::default()
        };
        for qu in [-20.0, -1.0, 0.0, 0.3, 7.0] {
            let d = pd_decomposition(&p, &State::from_slices(&[0.0, qu], &[0.2, -0.4]));
            assert!(d.pd && (d.det_first - eps).abs() < 1e-12);
            assert!(linalg::skewness_defect(&d.skew) < 1e-12);
        }
    }
}

#[test]
fn rejects_nonpositive_parameters() {
    assert!(build(BallBeamParams {
        eps: 0.0,
        ..Default::default()
    })
    .is_err());
}
