mod common;


#[test]
fn every_op_passes_finite_differences() {
    for (name, err) in common::gradient_suite() {
        assert!(err < 1e-4, "{name}: max relative error {err:e}");
    }
}

#[test]
fn identity_composition_matches_plain_kd_gradients() {
    let worst = common::duplication_max_diff(11);
    assert!(worst < 1e-10, "max gradient difference {worst:e}");
}
