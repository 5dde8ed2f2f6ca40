use complex_time::maximal::Family;
use complex_time_web::{exponent_row, gauss_row, origin_curve};
use std::f64::consts::TAU;

#[test]
fn gauss_row_matches_modulus_law() {
    let row = gauss_row(3, 4, 16).unwrap();
    assert!((row[2] - row[3]).abs() < 1e-9);
    assert!((row[0].hypot(row[1]) - row[2]).abs() < 1e-12);
    assert!(gauss_row(1, 0, 0).is_err());
}

#[test]
fn origin_curve_starts_at_l1_mass() {
    let c = origin_curve("case1", 1, 2.0, 16.0, 1e-6, 1.0, 40).unwrap();
    assert_eq!(c.len(), 80);
    assert!((c[0] - 1e-6).abs() < 1e-18 && (c[78] - 1.0).abs() < 1e-12);
    // f̂ ≥ 0, so as t → 0 the value tends to ∫f̂/(2π)
    let mass = Family::Case1
        .descriptor(1, 16.0)
        .unwrap()
        .l1_mass()
        .unwrap()
        / TAU;
    assert!((c[1] - mass).abs() < 1e-3 * mass, "{} vs {mass}", c[1]);
    assert!(c.chunks(2).all(|p| p[1] <= mass * (1.0 + 1e-9)));
    let a = origin_curve("annulus", 2, 1.5, 8.0, 1e-4, 1e-1, 5).unwrap();
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn origin_curve_rejects_bad_input() {
    assert!(origin_curve("disc", 2, 2.0, 8.0, 1e-3, 1.0, 10).is_err());
    assert!(origin_curve("case1", 2, 2.0, 8.0, 1.0, 1e-3, 10).is_err());
    assert!(origin_curve("case1", 2, 2.0, 8.0, 1e-3, 1.0, 1).is_err());
    assert!(origin_curve("case1", 2, -1.0, 8.0, 1e-3, 1.0, 10).is_err());
}

#[test]
fn exponent_row_saturates() {
    let e = exponent_row(2, &[0.5, 1.0, 2.0, 3.0, 10.0]).unwrap();
    assert_eq!(&e[..2], &[0.0, 0.0]);
    assert!((e[2] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(e[3], e[4]);
    assert!(exponent_row(0, &[2.0]).is_err());
}
