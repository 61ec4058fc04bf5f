//! Minimum-energy transfers.
//!
//! Extremals of `int |u|^2 dt` subject to the fiber constraint satisfy a
//! Lorentz-type force law with the curl of the constraint field as magnetic
//! field and a constant multiplier `lambda` as charge. [`shoot`] solves the
//! two-point boundary value problem for `(lambda, u(0))` by damped
//! Gauss-Newton over a scan of seeds.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{Curl, VectorField};
use crate::quadrature::adaptive_gauss;
use crate::system::{step_count, Fiber, SystemModel, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `int |u|^2 dt`
    Energy,
    /// `int |u|^2 + g(x) dt` over the base coordinates.
    EnergyPlusState { g: Expr },
}

impl CostKind {
    /// `g = x1^2 + ... + xd^2`.
    pub fn quadratic_state(dim: usize) -> Self {
        let g = (0..dim).fold(Expr::zero(), |acc, i| acc.add(&Expr::var(i).powi(2)));
        CostKind::EnergyPlusState { g }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalProblem {
    pub system: SystemModel,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub horizon: f64,
    pub cost: CostKind,
}

impl ExtremalProblem {
    pub fn new(system: SystemModel, from: Vec<f64>, to: Vec<f64>, horizon: f64, cost: CostKind) -> Result<Self> {
        match &system {
            SystemModel::Classic
            | SystemModel::GeneralR2 { .. }
            | SystemModel::GeneralR3 { .. }
            | SystemModel::DriftR3 { .. } => {}
            other => {
                return Err(Error::UnsupportedVariant(format!("no extremal equations for {}", other.name())));
            }
        }
        if matches!(system, SystemModel::DriftR3 { .. }) && cost != CostKind::Energy {
            return Err(Error::UnsupportedVariant("state cost is not combined with drift".into()));
        }
        let n = system.state_dim();
        for x in [&from, &to] {
            if x.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("boundary state".into()));
            }
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if let CostKind::EnergyPlusState { g } = &cost {
            if g.arity() > system.n_inputs() {
                return Err(Error::VariableOutOfRange { var: g.arity(), dim: system.n_inputs() });
            }
        }
        Ok(ExtremalProblem { system, from, to, horizon, cost })
    }

    pub fn energy(system: SystemModel, from: Vec<f64>, to: Vec<f64>, horizon: f64) -> Result<Self> {
        ExtremalProblem::new(system, from, to, horizon, CostKind::Energy)
    }

    pub fn dim(&self) -> usize {
        self.system.n_inputs()
    }
}

/// Right-hand side of the extremal equations in first-order form.
struct Dynamics {
    dim: usize,
    fiber: Fiber,
    /// Gradient of the drift (electric potential).
    drift_grad: Option<Vec<Expr>>,
    /// Gradient of the state cost.
    state_grad: Option<Vec<Expr>>,
}

fn gradient(g: &Expr, dim: usize) -> Vec<Expr> {
    (0..dim).map(|i| g.derivative(i)).collect()
}

impl Dynamics {
    fn new(p: &ExtremalProblem) -> Self {
        let dim = p.dim();
        let fiber = p.system.fibers().remove(0);
        let drift_grad = fiber.drift.as_ref().map(|g| gradient(g, dim));
        let state_grad = match &p.cost {
            CostKind::Energy => None,
            CostKind::EnergyPlusState { g } => Some(gradient(g, dim)),
        };
        Dynamics { dim, fiber, drift_grad, state_grad }
    }

    fn field(&self) -> &VectorField {
        &self.fiber.field
    }

    fn accel(&self, x: &[f64], v: &[f64], lambda: f64, a: &mut [f64]) -> Result<()> {
        self.field().check_point(x)?;
        match self.field().curl_expr().eval(x) {
            Curl::Scalar(c) => {
                a[0] = -lambda * c * v[1];
                a[1] = lambda * c * v[0];
            }
            Curl::Vector(b) => {
                a[0] = lambda * (b[1] * v[2] - b[2] * v[1]);
                a[1] = lambda * (b[2] * v[0] - b[0] * v[2]);
                a[2] = lambda * (b[0] * v[1] - b[1] * v[0]);
            }
        }
        if let Some(grad) = &self.drift_grad {
            for (ai, gi) in a.iter_mut().zip(grad) {
                *ai -= lambda * gi.eval(x);
            }
        }
        if let Some(grad) = &self.state_grad {
            for (ai, gi) in a.iter_mut().zip(grad) {
                *ai = 0.5 * (*ai + gi.eval(x));
            }
        }
        Ok(())
    }

    /// Layout `[x (dim), v (dim), fiber]`.
    fn deriv(&self, s: &[f64], lambda: f64, ds: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let (x, rest) = s.split_at(d);
        let v = &rest[..d];
        ds[..d].copy_from_slice(v);
        self.accel(x, v, lambda, &mut ds[d..2 * d])?;
        ds[2 * d] = self.fiber.rate(x, v)?;
        Ok(())
    }

    fn integrate(
        &self,
        from: &[f64],
        u0: &[f64],
        lambda: f64,
        horizon: f64,
        steps: usize,
        mut record: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let d = self.dim;
        let n = 2 * d + 1;
        let mut s = vec![0.0; n];
        s[..d].copy_from_slice(&from[..d]);
        s[d..2 * d].copy_from_slice(u0);
        s[2 * d] = from[d];
        record(0, &s);
        let h = horizon / steps as f64;
        let mut tmp = vec![0.0; n];
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..steps {
            self.deriv(&s, lambda, &mut k1)?;
            for j in 0..n {
                tmp[j] = s[j] + 0.5 * h * k1[j];
            }
            self.deriv(&tmp, lambda, &mut k2)?;
            for j in 0..n {
                tmp[j] = s[j] + 0.5 * h * k2[j];
            }
            self.deriv(&tmp, lambda, &mut k3)?;
            for j in 0..n {
                tmp[j] = s[j] + h * k3[j];
            }
            self.deriv(&tmp, lambda, &mut k4)?;
            for j in 0..n {
                s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("extremal state at step {}", i + 1)));
            }
            record(i + 1, &s);
        }
        Ok(s)
    }

    fn endpoint(&self, p: &ExtremalProblem, lambda: f64, u0: &[f64], steps: usize) -> Result<Vec<f64>> {
        let s = self.integrate(&p.from, u0, lambda, p.horizon, steps, |_, _| {})?;
        let d = self.dim;
        let mut x = s[..d].to_vec();
        x.push(s[2 * d]);
        Ok(x)
    }
}

/// Acceleration `x''` on an extremal at position `x` (base coordinates) with
/// velocity `v`:
/// energy cost `lambda (curl f) x v`; drift `-lambda grad g + lambda (curl f) x v`;
/// state cost `(grad g + lambda (curl f) x v) / 2`. In the plane the curl is
/// the scalar `c` and `(curl f) x v = c (-v2, v1)`.
pub fn extremal_rhs(problem: &ExtremalProblem, x: &[f64], v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let d = problem.dim();
    for s in [x, v] {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
    }
    let mut a = vec![0.0; d];
    Dynamics::new(problem).accel(x, v, lambda, &mut a)?;
    Ok(a)
}

/// Sampled extremal: positions (base and fiber) and base velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl ExtremalTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.velocities.iter().map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt()).collect()
    }

    /// Cost integral by composite Simpson over the samples.
    pub fn cost(&self, cost: &CostKind) -> f64 {
        let integrand: Vec<f64> = self
            .velocities
            .iter()
            .zip(&self.states)
            .map(|(v, x)| {
                let e: f64 = v.iter().map(|c| c * c).sum();
                match cost {
                    CostKind::Energy => e,
                    CostKind::EnergyPlusState { g } => e + g.eval(&x[..v.len()]),
                }
            })
            .collect();
        simpson(&self.times, &integrand)
    }

    /// CSV with header `t,x1,...,xn` like [`Trajectory::write_csv`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{}", crate::json::fmt_f64(*t))?;
            for v in x {
                write!(w, ",{}", crate::json::fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Composite Simpson on a uniform grid; an odd interval count closes with
/// the 3/8 rule.
fn simpson(t: &[f64], y: &[f64]) -> f64 {
    let n = y.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * (t[1] - t[0]) * (y[0] + y[1]),
        _ => {
            let h = (t[n] - t[0]) / n as f64;
            let even = if n.is_multiple_of(2) { n } else { n - 3 };
            let mut acc = 0.0;
            for k in (0..even).step_by(2) {
                acc += h / 3.0 * (y[k] + 4.0 * y[k + 1] + y[k + 2]);
            }
            if even < n {
                acc += 3.0 * h / 8.0 * (y[even] + 3.0 * y[even + 1] + 3.0 * y[even + 2] + y[even + 3]);
            }
            acc
        }
    }
}

/// Cost of a simulated trajectory, with `u` read from its input signal.
pub fn energy_cost(traj: &Trajectory, cost: &CostKind) -> f64 {
    let integrand: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let u = traj.inputs.eval(t);
            let e: f64 = u.iter().map(|c| c * c).sum();
            match cost {
                CostKind::Energy => e,
                CostKind::EnergyPlusState { g } => e + g.eval(&x[..u.len()]),
            }
        })
        .collect();
    simpson(&traj.times, &integrand)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub lambda: f64,
    pub u0: Vec<f64>,
    pub trajectory: ExtremalTrajectory,
    pub cost: f64,
    pub residual: f64,
    /// Seed branch `k` of the multiplier scan, signed by the seed; 0 for the
    /// trivial transfer.
    pub branch: i32,
}

/// Exported fields of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub lambda: f64,
    pub u0: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
    pub branch: i32,
}

impl OptimalSolution {
    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            lambda: self.lambda,
            u0: self.u0.clone(),
            cost: self.cost,
            residual: self.residual,
            branch: self.branch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    /// Integration step of the final solution; must divide the horizon.
    pub step: Option<f64>,
    /// Endpoint tolerance.
    pub tol: f64,
    /// Steps per horizon during the seed scan.
    pub scan_steps: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions { step: None, tol: 1e-6, scan_steps: 400, max_iter: 40, seed: 0 }
    }
}

pub const BRANCHES: i32 = 5;
const DIRECTIONS: usize = 8;

struct Candidate {
    lambda: f64,
    u0: Vec<f64>,
    branch: i32,
}

fn seed_directions(dim: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        (0..DIRECTIONS)
            .map(|k| {
                let a = PI / 4.0 + TAU * k as f64 / DIRECTIONS as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()
    } else {
        let s = 1.0 / 3f64.sqrt();
        let mut out = Vec::new();
        for k in 0..DIRECTIONS {
            let sign = |bit: usize| if k >> bit & 1 == 0 { s } else { -s };
            out.push(vec![sign(0), sign(1), sign(2)]);
        }
        out
    }
}

/// Mean `|curl f|` over the box spanned by the boundary base points, padded by 1.
fn curl_scale(p: &ExtremalProblem, field: &VectorField) -> f64 {
    let d = p.dim();
    let lo: Vec<f64> = (0..d).map(|i| p.from[i].min(p.to[i]) - 1.0).collect();
    let hi: Vec<f64> = (0..d).map(|i| p.from[i].max(p.to[i]) + 1.0).collect();
    let n = 9usize;
    let total = n.pow(d as u32);
    let (mut sum, mut count) = (0.0, 0usize);
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for i in 0..d {
            x[i] = lo[i] + (hi[i] - lo[i]) * (r % n) as f64 / (n - 1) as f64;
            r /= n;
        }
        if field.check_point(&x).is_ok() {
            let m = field.curl_expr().eval(&x).magnitude();
            if m.is_finite() {
                sum += m;
                count += 1;
            }
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    if mean > 1e-12 {
        mean
    } else {
        1.0
    }
}

fn candidates(p: &ExtremalProblem, dynamics: &Dynamics, opts: &ShootOptions, only: Option<i32>) -> Vec<Candidate> {
    let d = p.dim();
    let t = p.horizon;
    let scale = curl_scale(p, dynamics.field());
    let gap = (p.to[d] - p.from[d]).abs();
    let drift: Vec<f64> = (0..d).map(|i| (p.to[i] - p.from[i]) / t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    // Whole-turn seeds close the base loop; a moving base also gets
    // half-turn seeds and a near-straight seed.
    let moves = drift.iter().any(|v| v.abs() > 1e-12);
    for k in 1..=BRANCHES {
        for sign in [1.0, -1.0] {
            let branch = if sign > 0.0 { k } else { -k };
            if only.is_some_and(|b| b != k && b != branch) {
                continue;
            }
            let jitter = 1.0 + 1e-3 * rng.random_range(-1.0..1.0);
            let lambda = sign * TAU * k as f64 / (t * scale) * jitter;
            let mag = (2.0 * TAU * k as f64 * gap / (t * t * scale)).sqrt();
            for dir in seed_directions(d) {
                let u0 = dir.iter().zip(&drift).map(|(a, b)| mag * a + b).collect();
                out.push(Candidate { lambda, u0, branch });
            }
            if moves {
                let half = lambda * (k as f64 - 0.5) / k as f64;
                let mag = (2.0 * TAU * (k as f64 - 0.5) * gap / (t * t * scale)).sqrt();
                for dir in seed_directions(d) {
                    let u0 = dir.iter().zip(&drift).map(|(a, b)| mag * a + b).collect();
                    out.push(Candidate { lambda: half, u0, branch });
                }
                if k == 1 {
                    out.push(Candidate { lambda: sign * 1e-2 / (t * scale), u0: drift.clone(), branch });
                }
            }
        }
    }
    out
}

struct Converged {
    lambda: f64,
    u0: Vec<f64>,
    residual: f64,
}

/// Endpoint mismatch; with `convention` an extra row `u1(0) - u2(0)`.
fn residual_of(
    dyn_: &Dynamics,
    p: &ExtremalProblem,
    params: &[f64],
    steps: usize,
    convention: bool,
) -> Result<Vec<f64>> {
    let end = dyn_.endpoint(p, params[0], &params[1..], steps)?;
    let mut r: Vec<f64> = end.iter().zip(&p.to).map(|(a, b)| a - b).collect();
    if convention {
        r.push(params[1] - params[2]);
    }
    Ok(r)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Damped Gauss-Newton with minimum-norm steps from the SVD.
fn gauss_newton(
    dyn_: &Dynamics,
    p: &ExtremalProblem,
    mut params: Vec<f64>,
    steps: usize,
    target: f64,
    max_iter: usize,
    convention: bool,
) -> Option<Converged> {
    let n = params.len();
    let mut r = residual_of(dyn_, p, &params, steps, convention).ok()?;
    let mut rn = norm(&r);
    let scale = norm(&p.to).max(1.0);
    let mut stalled = 0;
    for _ in 0..max_iter {
        if rn < target {
            break;
        }
        let before = rn;
        let mut jac = DMatrix::zeros(r.len(), n);
        for j in 0..n {
            let h = 1e-7 * params[j].abs().max(1.0);
            let mut q = params.clone();
            q[j] += h;
            let rq = residual_of(dyn_, p, &q, steps, convention).ok()?;
            for i in 0..r.len() {
                jac[(i, j)] = (rq[i] - r[i]) / h;
            }
        }
        let rhs = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rhs;
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let delta = svd.solve(&rhs, 1e-10 * smax.max(1e-300)).ok()?;
        let mut improved = false;
        let try_step =
            |delta: &DVector<f64>, halvings: usize, params: &mut Vec<f64>, r: &mut Vec<f64>, rn: &mut f64| {
                let mut alpha = 1.0;
                for _ in 0..halvings {
                    let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(a, b)| a - alpha * b).collect();
                    if let Ok(rt) = residual_of(dyn_, p, &trial, steps, convention) {
                        let tn = norm(&rt);
                        if tn < *rn {
                            *params = trial;
                            *r = rt;
                            *rn = tn;
                            return true;
                        }
                    }
                    alpha *= 0.5;
                }
                false
            };
        if try_step(&delta, 12, &mut params, &mut r, &mut rn) {
            improved = true;
        } else {
            // Levenberg-Marquardt fallback near singular Jacobians.
            let mut mu = 1e-6 * smax * smax;
            for _ in 0..10 {
                let mut a = jtj.clone();
                for i in 0..n {
                    a[(i, i)] += mu;
                }
                if let Some(step) = a.lu().solve(&jtr) {
                    if try_step(&step, 1, &mut params, &mut r, &mut rn) {
                        improved = true;
                        break;
                    }
                }
                mu *= 10.0;
            }
        }
        if !improved || rn > 1e6 * scale {
            break;
        }
        stalled = if rn > 0.9 * before { stalled + 1 } else { 0 };
        if stalled >= 3 {
            break;
        }
    }
    (rn.is_finite()).then(|| Converged { lambda: params[0], u0: params[1..].to_vec(), residual: rn })
}

/// Re-solves with `u1(0) = u2(0)` imposed; kept only when the endpoint
/// still meets the tolerance, i.e. when the initial direction was free.
fn with_convention(
    dyn_: &Dynamics,
    p: &ExtremalProblem,
    sol: &Converged,
    steps: usize,
    opts: &ShootOptions,
) -> Option<Converged> {
    if sol.u0.len() < 2 || (sol.u0[0] - sol.u0[1]).abs() < 1e-12 {
        return None;
    }
    let mut params = vec![sol.lambda];
    params.extend(&sol.u0);
    let c = gauss_newton(dyn_, p, params, steps, 1e-12, opts.max_iter, true)?;
    let mut params = vec![c.lambda];
    params.extend(&c.u0);
    let end = norm(&residual_of(dyn_, p, &params, steps, false).ok()?);
    (end < opts.tol && end <= sol.residual.max(1e-3 * opts.tol) && (c.u0[0] - c.u0[1]).abs() < 1e-9)
        .then_some(Converged { lambda: c.lambda, u0: c.u0, residual: end })
}

fn fine_steps(p: &ExtremalProblem, opts: &ShootOptions) -> Result<usize> {
    match opts.step {
        Some(h) => step_count(p.horizon, h),
        None => Ok(2000),
    }
}

fn trivial(p: &ExtremalProblem, dyn_: &Dynamics, steps: usize) -> Result<Option<OptimalSolution>> {
    let zero = vec![0.0; p.dim()];
    let end = dyn_.endpoint(p, 0.0, &zero, steps)?;
    let residual = norm(&end.iter().zip(&p.to).map(|(a, b)| a - b).collect::<Vec<_>>());
    if residual > 1e-14 * norm(&p.to).max(1.0) {
        return Ok(None);
    }
    let trajectory = record(p, dyn_, 0.0, &zero, steps)?;
    let cost = trajectory.cost(&p.cost);
    Ok(Some(OptimalSolution { lambda: 0.0, u0: zero, trajectory, cost, residual, branch: 0 }))
}

fn record(p: &ExtremalProblem, dyn_: &Dynamics, lambda: f64, u0: &[f64], steps: usize) -> Result<ExtremalTrajectory> {
    let d = p.dim();
    let h = p.horizon / steps as f64;
    let mut traj = ExtremalTrajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
    };
    dyn_.integrate(&p.from, u0, lambda, p.horizon, steps, |i, s| {
        traj.times.push(if i == steps { p.horizon } else { i as f64 * h });
        let mut x = s[..d].to_vec();
        x.push(s[2 * d]);
        traj.states.push(x);
        traj.velocities.push(s[d..2 * d].to_vec());
    })?;
    Ok(traj)
}

/// Integrates the extremal from `problem.from` with `x'(0) = u0`.
pub fn integrate_extremal(problem: &ExtremalProblem, lambda: f64, u0: &[f64], step: f64) -> Result<ExtremalTrajectory> {
    if u0.len() != problem.dim() {
        return Err(Error::DimensionMismatch { expected: problem.dim(), got: u0.len() });
    }
    let steps = step_count(problem.horizon, step)?;
    record(problem, &Dynamics::new(problem), lambda, u0, steps)
}

fn solve(p: &ExtremalProblem, opts: &ShootOptions, only: Option<i32>) -> Result<OptimalSolution> {
    let dyn_ = Dynamics::new(p);
    let steps = fine_steps(p, opts)?;
    dyn_.field().check_point(&p.from[..p.dim()])?;
    dyn_.field().check_point(&p.to[..p.dim()])?;
    if only.is_none() {
        if let Some(sol) = trivial(p, &dyn_, steps)? {
            return Ok(sol);
        }
    }
    let seeds = candidates(p, &dyn_, opts, only);
    let scan_tol = 1e-3 * opts.tol;
    let coarse_tol = 1e-6 * norm(&p.to).max(1.0);
    let coarse: Vec<(Converged, i32)> = seeds
        .par_iter()
        .filter_map(|c| {
            let mut params = vec![c.lambda];
            params.extend(&c.u0);
            let coarse = gauss_newton(&dyn_, p, params, opts.scan_steps, coarse_tol, opts.max_iter, false)?;
            Some((coarse, c.branch))
        })
        .collect();
    let accept = 1e-2 * norm(&p.to).max(1.0);
    let mut best_residual = f64::INFINITY;
    let mut distinct: Vec<(Converged, i32)> = Vec::new();
    for (conv, branch) in coarse {
        if conv.residual > accept {
            best_residual = best_residual.min(conv.residual);
            continue;
        }
        let same = |o: &Converged| {
            let d = (o.lambda - conv.lambda).abs()
                + norm(&o.u0.iter().zip(&conv.u0).map(|(a, b)| a - b).collect::<Vec<_>>());
            d < 1e-4 * (1.0 + conv.lambda.abs() + norm(&conv.u0))
        };
        if !distinct.iter().any(|(o, _)| same(o)) {
            distinct.push((conv, branch));
        }
    }
    let scanned: Vec<Option<(Converged, i32)>> = distinct
        .par_iter()
        .map(|(coarse, branch)| {
            let mut params = vec![coarse.lambda];
            params.extend(&coarse.u0);
            let fine = gauss_newton(&dyn_, p, params, steps, 1e-3 * scan_tol, opts.max_iter, false)?;
            let fine = with_convention(&dyn_, p, &fine, steps, opts).unwrap_or(fine);
            Some((fine, *branch))
        })
        .collect();

    let mut best: Option<(OptimalSolution, f64)> = None;
    for (conv, branch) in scanned.into_iter().flatten() {
        best_residual = best_residual.min(conv.residual);
        if !(conv.residual < opts.tol) {
            continue;
        }
        let trajectory = record(p, &dyn_, conv.lambda, &conv.u0, steps)?;
        let cost = trajectory.cost(&p.cost);
        // Equal costs prefer u1(0) = u2(0), then a positive initial direction.
        let tilt = if conv.u0.len() >= 2 { (conv.u0[0] - conv.u0[1]).abs() } else { 0.0 };
        let better = match &best {
            None => true,
            Some((b, b_tilt)) => {
                let tol = 1e-9 * b.cost.abs().max(1.0);
                let sum = |u: &[f64]| u.iter().sum::<f64>();
                cost < b.cost - tol
                    || (cost <= b.cost + tol
                        && (tilt < b_tilt - 1e-9 || (tilt <= b_tilt + 1e-9 && sum(&conv.u0) > sum(&b.u0) + 1e-9)))
            }
        };
        if better {
            let sol =
                OptimalSolution { lambda: conv.lambda, u0: conv.u0, trajectory, cost, residual: conv.residual, branch };
            best = Some((sol, tilt));
        }
    }
    best.map(|b| b.0).ok_or(Error::NoConvergence { best_residual })
}

/// Solves for `(lambda, u(0))` over the multiplier scan and returns the
/// cheapest extremal found.
pub fn shoot(problem: &ExtremalProblem, opts: &ShootOptions) -> Result<OptimalSolution> {
    solve(problem, opts, None)
}

/// Like [`shoot`] with the scan restricted to seeds of branch `k`
/// (`k > 0` for both signs, or a signed `k` for one sign).
pub fn shoot_branch(problem: &ExtremalProblem, k: i32, opts: &ShootOptions) -> Result<OptimalSolution> {
    if k == 0 || k.abs() > BRANCHES {
        return Err(Error::InvalidArgument(format!("branch must be in 1..={BRANCHES} in magnitude, got {k}")));
    }
    solve(problem, opts, Some(k))
}

/// Conserved quantities of the two-oscillator extremal in `y = x1 - x2`,
/// `z = x1 + x2`, where `y'' = lambda z z'` and `z'' = -lambda z y'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorReduction {
    /// Multiplier in the reduced equations (twice the solution's multiplier).
    pub lambda: f64,
    /// `y'^2 + z'^2 = r^2`.
    pub r: f64,
    /// `y' = lambda z^2 / 2 + c`.
    pub c: f64,
    pub kappa: f64,
    pub energy_spread: f64,
    pub c_spread: f64,
    /// Angle of the initial point on `z = sqrt(2 (r - c) / lambda) sin(theta)`.
    pub theta0: f64,
    /// `lambda ~ 0` or `r ~ |c|`: the elliptic time map does not apply.
    pub degenerate: bool,
}

/// Allowed relative spread of the conserved quantities.
pub const CONSERVATION_LIMIT: f64 = 1e-5;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn reduce_oscillator(sol: &OptimalSolution) -> Result<OscillatorReduction> {
    reduce_samples(sol.lambda, &sol.trajectory)
}

fn reduce_samples(lambda_ode: f64, traj: &ExtremalTrajectory) -> Result<OscillatorReduction> {
    if traj.velocities.first().is_none_or(|v| v.len() != 2) {
        return Err(Error::InvalidArgument("oscillator reduction needs a planar extremal".into()));
    }
    let lambda = 2.0 * lambda_ode;
    let mut energy = Vec::with_capacity(traj.times.len());
    let mut cs = Vec::with_capacity(traj.times.len());
    for (x, v) in traj.states.iter().zip(&traj.velocities) {
        let z = x[0] + x[1];
        let (yd, zd) = (v[0] - v[1], v[0] + v[1]);
        energy.push(yd * yd + zd * zd);
        cs.push(yd - lambda * z * z / 2.0);
    }
    let (r2, energy_spread) = mean_std(&energy);
    let (c, c_spread) = mean_std(&cs);
    let r = r2.sqrt();
    if energy_spread > CONSERVATION_LIMIT * r2.max(f64::MIN_POSITIVE) {
        return Err(Error::ConservationViolated {
            quantity: "y'^2 + z'^2".into(),
            spread: energy_spread,
            limit: CONSERVATION_LIMIT * r2,
        });
    }
    if c_spread > CONSERVATION_LIMIT * r.max(f64::MIN_POSITIVE) {
        return Err(Error::ConservationViolated {
            quantity: "y' - lambda z^2 / 2".into(),
            spread: c_spread,
            limit: CONSERVATION_LIMIT * r,
        });
    }
    // Orient so that lambda > 0.
    let (ln, cn) = if lambda < 0.0 { (-lambda, -c) } else { (lambda, c) };
    let degenerate = ln < 1e-12 || r - cn.abs() <= 1e-9 * r.max(1.0);
    let kappa = if degenerate { 0.0 } else { ((r - cn) / (r + cn)).sqrt() };
    let theta0 = if degenerate {
        0.0
    } else {
        let amp = (2.0 * (r - cn) / ln).sqrt();
        let (x, v) = (&traj.states[0], &traj.velocities[0]);
        let s = ((x[0] + x[1]) / amp).clamp(-1.0, 1.0);
        let th = s.asin();
        if v[0] + v[1] < 0.0 {
            PI - th
        } else {
            th
        }
    };
    Ok(OscillatorReduction { lambda, r, c, kappa, energy_spread, c_spread, theta0, degenerate })
}

impl OscillatorReduction {
    /// Multiplier and constant with the sign convention `lambda > 0`.
    pub fn normalized(&self) -> (f64, f64) {
        if self.lambda < 0.0 {
            (-self.lambda, -self.c)
        } else {
            (self.lambda, self.c)
        }
    }

    /// Amplitude of `z`: `sqrt(2 (r - c) / lambda)`.
    pub fn z_amplitude(&self) -> f64 {
        let (l, c) = self.normalized();
        (2.0 * (self.r - c) / l).sqrt()
    }

    /// Parameter `m = kappa^2 / (kappa^2 + 1)` of the elliptic integral.
    pub fn parameter(&self) -> f64 {
        let k2 = self.kappa * self.kappa;
        k2 / (k2 + 1.0)
    }
}

/// `F(psi | m) = int_0^psi (1 - m sin^2)^(-1/2)`, adaptive quadrature.
pub fn elliptic_f(psi: f64, m: f64) -> Result<f64> {
    if !(m < 1.0) || !m.is_finite() || !psi.is_finite() {
        return Err(Error::InvalidArgument(format!("elliptic parameter must be below 1, got {m}")));
    }
    Ok(adaptive_gauss(|t| 1.0 / (1.0 - m * t.sin().powi(2)).sqrt(), 0.0, psi, 1e-12))
}

/// Elapsed time `|t(theta) - t(theta0)|` along the reduced extremal, where
/// `z = sqrt(2 (r - c) / lambda) sin(theta)` and `theta` increases with time.
pub fn elliptic_time_map(red: &OscillatorReduction, theta: f64) -> Result<f64> {
    let (lambda, c) = red.normalized();
    if red.degenerate || !(red.r > c.abs()) || !(lambda > 0.0) {
        return Err(Error::InvalidArgument("time map needs r > |c| and lambda != 0".into()));
    }
    let m = red.parameter();
    let k2 = red.kappa * red.kappa;
    let rate = ((red.r + c) * lambda * (1.0 + k2) / 2.0).sqrt();
    let f0 = elliptic_f(FRAC_PI_2 - red.theta0, m)?;
    let f1 = elliptic_f(FRAC_PI_2 - theta, m)?;
    Ok(((f0 - f1) / rate).abs())
}

/// Independent integrator for a unit-mass, unit-charge particle:
/// `x'' = E(x) + v x B(x)`, classical RK4.
pub fn lorentz_particle(
    e: impl Fn(&[f64; 3]) -> [f64; 3],
    b: impl Fn(&[f64; 3]) -> [f64; 3],
    x0: [f64; 3],
    v0: [f64; 3],
    duration: f64,
    steps: usize,
) -> Vec<([f64; 3], [f64; 3])> {
    let force = |x: &[f64; 3], v: &[f64; 3]| {
        let ef = e(x);
        let bf = b(x);
        [ef[0] + v[1] * bf[2] - v[2] * bf[1], ef[1] + v[2] * bf[0] - v[0] * bf[2], ef[2] + v[0] * bf[1] - v[1] * bf[0]]
    };
    let add = |a: &[f64; 3], b: &[f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let h = duration / steps as f64;
    let (mut x, mut v) = (x0, v0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push((x, v));
    for _ in 0..steps {
        let a1 = force(&x, &v);
        let (x2, v2) = (add(&x, &v, 0.5 * h), add(&v, &a1, 0.5 * h));
        let a2 = force(&x2, &v2);
        let (x3, v3) = (add(&x, &v2, 0.5 * h), add(&v, &a2, 0.5 * h));
        let a3 = force(&x3, &v3);
        let (x4, v4) = (add(&x, &v3, h), add(&v, &a3, h));
        let a4 = force(&x4, &v4);
        for i in 0..3 {
            x[i] += h / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        out.push((x, v));
    }
    out
}
