mod common;

use common::*;
use lot_core::divergence::DivergenceKind;

#[test]
fn mle_and_js_loss_gradients_match_finite_differences() {
    let rep = gradient_check(20, 11, DivergenceKind::Js, 1e-4);
    assert!(rep.checked > 1000, "only {} elements checked", rep.checked);
    assert!(
        rep.failures.is_empty(),
        "{:#?}",
        &rep.failures[..rep.failures.len().min(10)]
    );
    eprintln!("worst relative error {:e} over {}", rep.worst_rel, rep.checked);
}

#[test]
fn kl_loss_gradients_match_below_cap() {
    let rep = gradient_check(8, 12, DivergenceKind::Kl, 1e-4);
    assert!(
        rep.failures.is_empty(),
        "{:#?}",
        &rep.failures[..rep.failures.len().min(10)]
    );
}

#[test]
fn js_gradient_matches_tangent_differences() {
    let rep = js_tangent_check(300, 13, 1e-4);
    assert!(rep.checked > 250);
    assert!(rep.failures.is_empty(), "{:#?}", rep.failures);
}
