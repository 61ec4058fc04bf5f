//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

/// Exponent tuples of all monomials in `vars` variables with total degree <= `degree`.
pub fn monomials(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..vars {
        out = out
            .into_iter()
            .flat_map(|m: Vec<u32>| {
                let used: u32 = m.iter().sum();
                (0..=degree - used).map(move |e| {
                    let mut n = m.clone();
                    n.push(e);
                    n
                })
            })
            .collect();
    }
    out
}

/// Polynomial text with the given coefficients, one per monomial.
pub fn poly_text(coeffs: &[f64], vars: usize, degree: u32) -> String {
    let terms: Vec<String> = monomials(vars, degree)
        .iter()
        .zip(coeffs)
        .map(|(m, c)| {
            let mut t = format!("({c:.6})");
            for (i, e) in m.iter().enumerate() {
                if *e > 0 {
                    t.push_str(&format!("*x{}^{e}", i + 1));
                }
            }
            t
        })
        .collect();
    terms.join(" + ")
}

pub fn random_poly(rng: &mut impl Rng, vars: usize, degree: u32) -> String {
    let n = monomials(vars, degree).len();
    let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    poly_text(&coeffs, vars, degree)
}

/// Complete elliptic integral `K(m)` by the arithmetic-geometric mean.
pub fn agm_k(m: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, (1.0 - m).sqrt());
    for _ in 0..40 {
        let (an, bn) = (0.5 * (a + b), (a * b).sqrt());
        a = an;
        b = bn;
    }
    std::f64::consts::PI / (2.0 * a)
}

/// First time at which the sampled signal `z` (with derivative `zd`) reaches
/// `level` after `start`, by cubic Hermite interpolation and bisection.
pub fn crossing_time(t: &[f64], z: &[f64], zd: &[f64], level: f64, start: f64) -> Option<f64> {
    for k in 0..t.len() - 1 {
        if t[k + 1] <= start {
            continue;
        }
        let (a, b) = (z[k] - level, z[k + 1] - level);
        if a == 0.0 && t[k] > start {
            return Some(t[k]);
        }
        if a.signum() == b.signum() {
            continue;
        }
        let h = t[k + 1] - t[k];
        let interp = |s: f64| {
            let s2 = s * s;
            let s3 = s2 * s;
            (2.0 * s3 - 3.0 * s2 + 1.0) * z[k]
                + (s3 - 2.0 * s2 + s) * h * zd[k]
                + (-2.0 * s3 + 3.0 * s2) * z[k + 1]
                + (s3 - s2) * h * zd[k + 1]
                - level
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if interp(mid).signum() == interp(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(t[k] + 0.5 * (lo + hi) * h);
    }
    None
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
