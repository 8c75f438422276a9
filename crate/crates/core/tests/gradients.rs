mod common;

#[test]
fn every_op_passes_finite_differences() {
    let reports = common::op_gradient_reports();
    for (name, r) in &reports {
        println!("{name}: max rel error {:.3e}", r.max_error());
    }
    assert_eq!(reports.len(), 14);
    common::assert_reports(&reports);
}

#[test]
fn oracle_suite() {
    common::label_round_trip();
    common::topk_matches_enumeration();
}
