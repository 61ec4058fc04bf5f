//! Quadrature rules: Gauss-Legendre (fixed, composite and adaptive) and the
//! periodic trapezoid rule with doubling used for closed contours.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl5() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(5))
}

fn gl10() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

/// Composite 5-point Gauss-Legendre over `panels` equal panels of `[a, b]`.
pub fn composite_gl5<E>(mut f: impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64, panels: usize) -> Result<f64, E> {
    let (xs, ws) = gl5();
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for (x, w) in xs.iter().zip(ws) {
            s += w * f(mid + 0.5 * h * x)?;
        }
        sum += 0.5 * h * s;
    }
    Ok(sum)
}

fn gl10_on(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let (xs, ws) = gl10();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    half * xs.iter().zip(ws).map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
}

/// Adaptive bisection with a 10-point Gauss-Legendre rule on each piece.
///
/// Stops refining a piece when the two-halves estimate agrees with the whole
/// to within its share of `tol`.
pub fn adaptive_gauss(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = gl10_on(&mut f, a, b);
    adapt(&mut f, a, b, whole, tol, 0)
}

fn adapt(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = gl10_on(f, a, m);
    let right = gl10_on(f, m, b);
    let split = left + right;
    if (split - whole).abs() <= tol || depth >= 40 {
        return split;
    }
    adapt(f, a, m, left, 0.5 * tol, depth + 1) + adapt(f, m, b, right, 0.5 * tol, depth + 1)
}

/// Outcome of a periodic trapezoid integration.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicEstimate<T> {
    pub value: T,
    pub points: usize,
    pub converged: bool,
}

/// Trapezoid rule over one period of `s in [0, 1)`, starting at `min_points`
/// and doubling until successive estimates differ by less than `tol` or
/// `max_points` is reached. Values already computed are reused on doubling.
pub fn periodic_trapezoid<T, E>(
    mut f: impl FnMut(f64) -> Result<T, E>,
    min_points: usize,
    max_points: usize,
    tol: f64,
    norm: impl Fn(T) -> f64,
) -> Result<PeriodicEstimate<T>, E>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let mut n = min_points;
    let mut sum = T::default();
    for k in 0..n {
        sum = sum + f(k as f64 / n as f64)?;
    }
    let mut estimate = sum * (1.0 / n as f64);
    while n < max_points {
        for k in 0..n {
            sum = sum + f((2 * k + 1) as f64 / (2 * n) as f64)?;
        }
        n *= 2;
        let next = sum * (1.0 / n as f64);
        let delta = norm(next - estimate);
        estimate = next;
        if delta < tol {
            return Ok(PeriodicEstimate { value: estimate, points: n, converged: true });
        }
    }
    Ok(PeriodicEstimate { value: estimate, points: n, converged: false })
}
