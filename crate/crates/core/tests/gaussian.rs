mod common;

use common::*;
use nbf::relaxation::Hyperrectangle;

#[test]
fn box_integrals_match_quadrature() {
    let out = gaussian(25, 21);
    println!("{}", out.detail);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn quadrature_reproduces_known_values() {
    // P(|Z| <= 1) and E[Z; Z in [0, inf)] = 1/sqrt(2 pi)
    let (p, _) = quad_interval(0.0, 1.0, -1.0, 1.0);
    assert!((p - 0.682_689_492_137_085_9).abs() < 1e-12);
    let (_, m) = quad_interval(0.0, 1.0, 0.0, f64::INFINITY);
    assert!((m - 0.398_942_280_401_432_7).abs() < 1e-12);
}

#[test]
fn far_tail_boxes_stay_accurate() {
    let g = gaussian_of(vec![0.0, 0.5], vec![0.01, 0.04]);
    let bx = Hyperrectangle::new(vec![0.55, 0.1], vec![0.9, 2.0]).unwrap();
    let (p0, m0) = quad_interval(0.0, 0.01, 0.55, 0.9);
    let (p1, m1) = quad_interval(0.5, 0.04, 0.1, 2.0);
    assert!((g.box_probability(&bx).unwrap() - p0 * p1).abs() < 1e-15);
    let e = g.partial_expectation(&bx).unwrap();
    assert!((e[0] - m0 * p1).abs() < 1e-15 && (e[1] - m1 * p0).abs() < 1e-15);
}
