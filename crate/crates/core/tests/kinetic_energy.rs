use sidapbc::matching::{
    build_lambda, generalized_force_twice, ida_ke_residual, lemma1_residual, sida_ke_matrix_residual,
    sida_ke_residual, GeneralizedForceSpec, LEMMA1_SIGN,
};
use sidapbc::sampling::ProbeBox;
use sidapbc::systems::coupled3;

fn states() -> Vec<sidapbc::State> {
    ProbeBox::symmetric(&[1.5; 3], &[2.0; 3]).sample_states(200, 4).unwrap()
}

#[test]
fn vector_form_equals_quadratic_matrix_form() {
    let sys = coupled3::plant().unwrap();
    let tgt = coupled3::target();
    let spec = coupled3::gyroscopic();
    let mut largest = 0.0f64;
    for x in states() {
        let v = ida_ke_residual(&sys, &tgt, &spec, &x).unwrap();
        let z = tgt.md_inv(&x.q).unwrap() * &x.p;
        for k in 0..sys.s() {
            let quad = LEMMA1_SIGN * z.dot(&(lemma1_residual(&sys, &tgt, &spec, k, &x.q).unwrap() * &z));
            assert!((v[k] - quad).abs() < 1e-9, "row {k}: {} vs {quad}", v[k]);
            largest = largest.max(v[k].abs());
        }
    }
    // The identity is not vacuous: the test system does not satisfy matching.
    assert!(largest > 1e-2);
}

#[test]
fn generalized_force_forms_agree() {
    let sys = coupled3::plant().unwrap();
    let tgt = coupled3::target();
    let gspec = GeneralizedForceSpec::from_gyroscopic(&coupled3::gyroscopic());
    for x in states().into_iter().take(50) {
        let v = sida_ke_residual(&sys, &tgt, &gspec, &x).unwrap();
        let z = tgt.md_inv(&x.q).unwrap() * &x.p;
        for k in 0..sys.s() {
            let m = sida_ke_matrix_residual(&sys, &tgt, &gspec, k, &x.q).unwrap();
            assert!((v[k] - z.dot(&(m * &z))).abs() < 1e-9);
        }
    }
}

#[test]
fn gyroscopic_embedding_reproduces_j2_force() {
    let tgt = coupled3::target();
    let spec = coupled3::gyroscopic();
    let gspec = GeneralizedForceSpec::from_gyroscopic(&spec);
    for x in states().into_iter().take(50) {
        let z = tgt.md_inv(&x.q).unwrap() * &x.p;
        let j2 = sidapbc::matching::build_j2(&spec, tgt.md.as_ref(), &x).unwrap();
        let lam = build_lambda(&gspec, tgt.md.as_ref(), &x).unwrap();
        assert!((&j2 * &z - lam * &z).amax() < 1e-12);
        let two_c = generalized_force_twice(&gspec, tgt.md.as_ref(), &x).unwrap();
        assert!((j2 * &z * 2.0 - two_c).amax() < 1e-12);
    }
}
