mod common;

use airl_core::model::AirlConfig;
use common::{check_case, objective_check, op_catalog, small_config};

#[test]
fn every_cataloged_op_matches_central_differences() {
    for case in op_catalog() {
        let report = check_case(&case);
        assert!(report.pass, "{}: {report:?}", case.name);
        assert!(report.checked > 0, "{}: nothing checked", case.name);
        if case.name == "coral_inv_loss" {
            assert_eq!(report.skipped, 0);
        }
    }
}

#[test]
fn full_objective_on_three_domains_small_model() {
    let report = objective_check(small_config(2), 1, 1, 1.0);
    assert!(report.pass, "{report:?}");
    assert!(report.checked > report.skipped, "{report:?}");
}

#[test]
fn full_objective_on_three_domains_default_model() {
    let report = objective_check(AirlConfig::new(2, 2), 211, 2, 1.0);
    assert!(report.pass, "{report:?}");
    assert!(report.checked > report.skipped, "{report:?}");
}

#[test]
fn full_objective_multiclass_head() {
    let report = objective_check(small_config(3), 1, 3, 2.0);
    assert!(report.pass, "{report:?}");
}
