use std::time::Instant;

use stlm_core::gradsuite::{check_loss, loss_suite, SuiteOptions, LOSSES};

#[test]
fn loss_suite_passes() {
    let t = Instant::now();
    let entries = loss_suite(&SuiteOptions::default()).unwrap();
    for e in &entries {
        println!("{:16} seeds {:2} max_rel_err {:.3e} tol {:.0e}", e.name, e.seeds, e.max_rel_err, e.rel_tol);
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    assert_eq!(entries.len(), LOSSES.len() + 1);
    assert!(entries.iter().all(|e| e.seeds >= 20));
    let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.clone()).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn faulty_log_rule_is_caught_by_focal_check() {
    let r = check_loss("focal", 3, Some("log")).unwrap();
    assert!(!r.passed());
}

#[test]
fn faulty_attention_rule_is_caught_end_to_end() {
    let r = check_loss("end_to_end", 3, Some("scaled_dot_attention")).unwrap();
    assert!(!r.passed(), "{}", r.max_rel_err());
}
