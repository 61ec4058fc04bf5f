mod common;

use std::f64::consts::PI;

use nonholo::controllability::{
    contour_integral, curl_scan, loop_integral, stokes_check, ComplexFn, CAVEAT_NON_SIMPLY_CONNECTED,
};
use nonholo::{
    classify, gradient_field, parse_expr, ExcludedSet, Loop, ProbeBudget, SystemModel, VectorField, Verdict,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn coeffs(vars: usize, degree: u32) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, common::monomials(vars, degree).len())
}

fn small_budget() -> ProbeBudget {
    ProbeBudget { grid: 17, loop_centers: 3, ..ProbeBudget::default() }
}

#[test]
fn stokes_on_random_polynomial_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..50 {
        let dim = if k % 2 == 0 { 2 } else { 3 };
        let comps: Vec<String> = (0..dim).map(|_| common::random_poly(&mut rng, dim, 3)).collect();
        let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
        let f = VectorField::parse(&refs).unwrap();
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plane = if dim == 2 { (0, 1) } else { [(0, 1), (0, 2), (1, 2)][k % 3] };
        let gamma = Loop::new(center, rng.random_range(0.2..1.5), if k % 4 < 2 { 1 } else { -1 }, plane).unwrap();
        let s = stokes_check(&f, &gamma).unwrap();
        assert!((s.line - s.surface).abs() / s.line.abs().max(1.0) < 1e-6, "{s:?}");
    }
}

#[test]
fn residue_formula() {
    for n in 1..=4u32 {
        let f = ComplexFn::conj_power(n);
        let th = PI / n as f64;
        for a in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(th.cos(), th.sin())] {
            for r in [1.0, 0.6] {
                let gamma = Loop::circle([a.re, a.im], r);
                let got = contour_integral(&f, &gamma).unwrap();
                let want = Complex64::new(0.0, 2.0 * PI * n as f64) * a.conj().powu(n - 1) * r * r;
                assert!((got - want).norm() < 1e-8, "n={n} a={a} r={r}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn holomorphic_functions_have_zero_loops_and_are_uncontrollable() {
    let budget = small_budget();
    for (re, im) in [("1", "0"), ("x1", "x2"), ("x1^2 - x2^2", "2*x1*x2"), ("x1^3 - 3*x1*x2^2", "3*x1^2*x2 - x2^3")] {
        let f = ComplexFn::parse(re, im).unwrap();
        for c in [[0.0, 0.0], [1.0, -0.5], [-1.2, 0.7]] {
            for r in [0.25, 1.0] {
                assert!(contour_integral(&f, &Loop::circle(c, r)).unwrap().norm() < 1e-10);
            }
        }
        let sys = SystemModel::complex_plane(parse_expr(re).unwrap(), parse_expr(im).unwrap(), None).unwrap();
        assert_eq!(classify(&sys, &budget).unwrap().verdict, Verdict::Uncontrollable, "{re} + i {im}");
    }
}

#[test]
fn punctured_plane_example() {
    let f = VectorField::parse(&["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]).unwrap().with_excluded(ExcludedSet::origin());
    let r = classify(&SystemModel::general_r2(f.clone()).unwrap(), &ProbeBudget::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Uncontrollable);
    assert!(r.has_caveat(CAVEAT_NON_SIMPLY_CONNECTED));
    assert!(loop_integral(&f, &Loop::circle([0.0, 0.0], 1.0)).unwrap().abs() < 1e-12);
    let scan = curl_scan(&f, &[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
    assert_eq!(scan.skipped, 1);
    assert!(scan.max_abs < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_are_uncontrollable(c in coeffs(2, 4)) {
        let phi = parse_expr(&common::poly_text(&c, 2, 4)).unwrap();
        let sys = SystemModel::general_r2(gradient_field(&phi, 2).unwrap()).unwrap();
        prop_assert_eq!(classify(&sys, &small_budget()).unwrap().verdict, Verdict::Uncontrollable);
    }

    #[test]
    fn verdict_survives_relabeling_and_scaling(c1 in coeffs(2, 2), c2 in coeffs(2, 2), s in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0]) {
        let f = VectorField::parse(&[&common::poly_text(&c1, 2, 2), &common::poly_text(&c2, 2, 2)]).unwrap();
        let budget = small_budget();
        let base = classify(&SystemModel::general_r2(f.clone()).unwrap(), &budget).unwrap().verdict;
        let swapped = classify(&SystemModel::general_r2(f.permuted(&[1, 0]).unwrap()).unwrap(), &budget).unwrap();
        let scaled = classify(&SystemModel::general_r2(f.scaled(s)).unwrap(), &budget).unwrap();
        prop_assert_eq!(base, swapped.verdict);
        prop_assert_eq!(base, scaled.verdict);
    }
}
