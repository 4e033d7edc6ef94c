mod common;

use common::*;

#[test]
fn analytic_gradients_match_finite_differences() {
    let out = gradients(15, 31);
    println!("{}", out.detail);
    assert!(out.pass, "{}", out.detail);
}
