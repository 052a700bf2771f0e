use mam2_core::gradsuite::{self, TOLERANCE};

#[test]
fn every_gradient_matches_finite_differences() {
    let reports = gradsuite::run().unwrap();
    let mut bad = Vec::new();
    for (name, r) in &reports {
        println!("{name:28} checked {:5} max rel err {:.2e}", r.checked, r.max_rel_err);
        if !(r.max_rel_err <= TOLERANCE) || r.checked == 0 {
            bad.push(name.clone());
        }
    }
    assert!(bad.is_empty(), "gradient mismatch in {bad:?}");
}
