//! The nonholonomic integrator family and its simulation.
//!
//! Every variant has the same skeleton: base coordinates driven directly by
//! the inputs (`x_i' = u_i`) and fiber coordinates whose rate is a 1-form in
//! the base coordinates, optionally with a drift term. [`SystemModel::fibers`]
//! lowers each variant to that skeleton; simulation and quadrature only see
//! the lowered form.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{ExcludedSet, VectorField};
use crate::input::InputSignal;
use crate::quadrature::composite_gl5;

/// Relative tolerance for "step divides duration".
const STEP_DIVIDES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemModel {
    /// `x3' = x1 u2 - x2 u1`
    Classic,
    /// `x3' = f1 u1 + f2 u2`
    GeneralR2 { field: VectorField },
    /// `x_ij' = x_i u_j - x_j u_i` for every pair `i < j`.
    GeneralizedRm { m: usize },
    /// `x4' = f1 u1 + f2 u2 + f3 u3`
    GeneralR3 { field: VectorField },
    /// `x_ij' = f_i(x_i, x_j) u_i + f_j(x_i, x_j) u_j`; each pair field is
    /// written in local variables `x1 = x_i`, `x2 = x_j`. Keys are zero based.
    PairwiseRm { m: usize, fields: BTreeMap<(usize, usize), VectorField> },
    /// `x4' = g + f1 u1 + f2 u2 + f3 u3`
    DriftR3 { drift: Expr, field: VectorField },
    /// `z' = u`, `w' = F u` with `F = f2 + i f1`:
    /// `w1' = f2 u1 - f1 u2`, `w2' = f1 u1 + f2 u2`.
    ComplexPlane { f2: Expr, f1: Expr, excluded: Option<ExcludedSet> },
}

/// One fiber coordinate in lowered form.
#[derive(Debug, Clone)]
pub struct Fiber {
    /// Base coordinates feeding the 1-form, in the field's variable order.
    pub base: Vec<usize>,
    pub field: VectorField,
    pub drift: Option<Expr>,
    pub label: String,
}

impl Fiber {
    fn local(&self, x: &[f64], buf: &mut [f64; 3]) {
        for (k, &i) in self.base.iter().enumerate() {
            buf[k] = x[i];
        }
    }

    /// Rate of the fiber coordinate at base point `x` under input `u`.
    pub fn rate(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let mut lx = [0.0; 3];
        let mut lu = [0.0; 3];
        self.local(x, &mut lx);
        self.local(u, &mut lu);
        let n = self.base.len();
        self.field.check_point(&lx[..n])?;
        let mut r = self.field.dot_unchecked(&lx[..n], &lu[..n]);
        if let Some(g) = &self.drift {
            r += g.eval(&lx[..n]);
        }
        Ok(r)
    }
}

fn pair_label(i: usize, j: usize) -> String {
    format!("x{}{}", i + 1, j + 1)
}

fn classic_field() -> VectorField {
    VectorField::new(vec![Expr::var(1).neg(), Expr::var(0)]).expect("planar field")
}

impl SystemModel {
    pub fn general_r2(field: VectorField) -> Result<Self> {
        if field.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: field.dim() });
        }
        Ok(SystemModel::GeneralR2 { field })
    }

    pub fn general_r3(field: VectorField) -> Result<Self> {
        if field.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: field.dim() });
        }
        Ok(SystemModel::GeneralR3 { field })
    }

    pub fn generalized_rm(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("m must be at least 2, got {m}")));
        }
        Ok(SystemModel::GeneralizedRm { m })
    }

    /// Builds a pairwise system; exactly one planar field per pair `i < j`.
    pub fn pairwise(m: usize, fields: BTreeMap<(usize, usize), VectorField>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("m must be at least 2, got {m}")));
        }
        let want = m * (m - 1) / 2;
        if fields.len() != want {
            return Err(Error::InvalidArgument(format!("expected {want} pair fields, got {}", fields.len())));
        }
        for (&(i, j), f) in &fields {
            if !(i < j && j < m) {
                return Err(Error::InvalidArgument(format!("bad pair ({i}, {j}) for m = {m}")));
            }
            if f.dim() != 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: f.dim() });
            }
        }
        Ok(SystemModel::PairwiseRm { m, fields })
    }

    pub fn drift_r3(drift: Expr, field: VectorField) -> Result<Self> {
        if field.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: field.dim() });
        }
        if drift.arity() > 3 {
            return Err(Error::VariableOutOfRange { var: drift.arity(), dim: 3 });
        }
        Ok(SystemModel::DriftR3 { drift, field })
    }

    /// Complex-plane system from `F = re + i im`, i.e. `f2 = re`, `f1 = im`.
    pub fn complex_plane(re: Expr, im: Expr, excluded: Option<ExcludedSet>) -> Result<Self> {
        for e in [&re, &im] {
            if e.arity() > 2 {
                return Err(Error::VariableOutOfRange { var: e.arity(), dim: 2 });
            }
        }
        Ok(SystemModel::ComplexPlane { f2: re, f1: im, excluded })
    }

    /// Complex-plane system for `F(z) = conj(z)^n`.
    pub fn conj_power(n: u32) -> Self {
        let (re, im) = conj_power_parts(n);
        SystemModel::ComplexPlane { f2: re, f1: im, excluded: None }
    }

    /// `Some(n)` when this is the `conj(z)^n` system as built by [`conj_power`](Self::conj_power).
    pub fn conj_power_degree(&self) -> Option<u32> {
        if !matches!(self, SystemModel::ComplexPlane { excluded: None, .. }) {
            return None;
        }
        (1..=16).find(|&n| *self == SystemModel::conj_power(n))
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemModel::Classic => "classic",
            SystemModel::GeneralR2 { .. } => "general_r2",
            SystemModel::GeneralizedRm { .. } => "generalized_rm",
            SystemModel::GeneralR3 { .. } => "general_r3",
            SystemModel::PairwiseRm { .. } => "pairwise_rm",
            SystemModel::DriftR3 { .. } => "drift_r3",
            SystemModel::ComplexPlane { .. } => "complex_plane",
        }
    }

    /// Number of inputs, equal to the number of base coordinates.
    pub fn n_inputs(&self) -> usize {
        match self {
            SystemModel::Classic | SystemModel::GeneralR2 { .. } | SystemModel::ComplexPlane { .. } => 2,
            SystemModel::GeneralR3 { .. } | SystemModel::DriftR3 { .. } => 3,
            SystemModel::GeneralizedRm { m } | SystemModel::PairwiseRm { m, .. } => *m,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemModel::Classic | SystemModel::GeneralR2 { .. } => 3,
            SystemModel::GeneralR3 { .. } | SystemModel::DriftR3 { .. } | SystemModel::ComplexPlane { .. } => 4,
            SystemModel::GeneralizedRm { m } | SystemModel::PairwiseRm { m, .. } => m + m * (m - 1) / 2,
        }
    }

    /// The planar field behind a two-input, single-fiber system.
    pub fn planar_field(&self) -> Option<VectorField> {
        match self {
            SystemModel::Classic => Some(classic_field()),
            SystemModel::GeneralR2 { field } => Some(field.clone()),
            _ => None,
        }
    }

    /// Lowers the variant to base coordinates plus 1-form fibers, in state order.
    pub fn fibers(&self) -> Vec<Fiber> {
        let fiber = |base: Vec<usize>, field: VectorField, drift: Option<Expr>, label: String| Fiber {
            base,
            field,
            drift,
            label,
        };
        match self {
            SystemModel::Classic => vec![fiber(vec![0, 1], classic_field(), None, "x3".into())],
            SystemModel::GeneralR2 { field } => vec![fiber(vec![0, 1], field.clone(), None, "x3".into())],
            SystemModel::GeneralR3 { field } => vec![fiber(vec![0, 1, 2], field.clone(), None, "x4".into())],
            SystemModel::DriftR3 { drift, field } => {
                vec![fiber(vec![0, 1, 2], field.clone(), Some(drift.clone()), "x4".into())]
            }
            SystemModel::GeneralizedRm { m } => {
                pairs(*m).map(|(i, j)| fiber(vec![i, j], classic_field(), None, pair_label(i, j))).collect()
            }
            SystemModel::PairwiseRm { fields, .. } => {
                fields.iter().map(|(&(i, j), f)| fiber(vec![i, j], f.clone(), None, pair_label(i, j))).collect()
            }
            SystemModel::ComplexPlane { f2, f1, excluded } => {
                let attach = |f: VectorField| match excluded {
                    Some(set) => f.with_excluded(set.clone()),
                    None => f,
                };
                let w1 = attach(VectorField::new(vec![f2.clone(), f1.neg()]).expect("planar"));
                let w2 = attach(VectorField::new(vec![f1.clone(), f2.clone()]).expect("planar"));
                vec![fiber(vec![0, 1], w1, None, "w1".into()), fiber(vec![0, 1], w2, None, "w2".into())]
            }
        }
    }

    /// Column labels of the state vector.
    pub fn state_labels(&self) -> Vec<String> {
        let n = self.n_inputs();
        let mut labels: Vec<String> = (0..n).map(|i| format!("x{}", i + 1)).collect();
        labels.extend(self.fibers().into_iter().map(|f| f.label));
        labels
    }
}

/// Pairs `(i, j)` with `i < j < m` in lexicographic order.
pub fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// Real and imaginary parts of `(x1 - i x2)^n`.
pub fn conj_power_parts(n: u32) -> (Expr, Expr) {
    let (a, b) = (Expr::var(0), Expr::var(1).neg());
    let mut re = Expr::one();
    let mut im = Expr::zero();
    for _ in 0..n {
        let next_re = re.mul(&a).sub(&im.mul(&b));
        let next_im = re.mul(&b).add(&im.mul(&a));
        re = next_re;
        im = next_im;
    }
    (re, im)
}

/// Lowered system ready for repeated right-hand-side evaluation.
struct Lowered {
    n_inputs: usize,
    fibers: Vec<Fiber>,
}

impl Lowered {
    fn new(sys: &SystemModel) -> Self {
        Lowered { n_inputs: sys.n_inputs(), fibers: sys.fibers() }
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        dx[..self.n_inputs].copy_from_slice(&u[..self.n_inputs]);
        for (k, f) in self.fibers.iter().enumerate() {
            dx[self.n_inputs + k] = f.rate(x, u)?;
        }
        Ok(())
    }
}

/// Uniformly sampled trajectory of a controlled system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: InputSignal,
    pub step: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    /// CSV with header `t,x1,...,xn`, values at 17 significant digits.
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

/// Number of uniform steps of size `step` covering `duration`, or an error
/// when `step` does not divide it.
pub fn step_count(duration: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let n = (duration / step).round();
    if n < 1.0 || (n * step - duration).abs() > STEP_DIVIDES_TOL * duration.max(1.0) {
        return Err(Error::StepMismatch { step, duration });
    }
    Ok(n as usize)
}

/// Default step: `1e-3 * T`.
pub fn default_step(duration: f64) -> f64 {
    duration / 1000.0
}

fn validate(sys: &SystemModel, u: &InputSignal, x0: &[f64], duration: f64) -> Result<()> {
    if x0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch { expected: sys.state_dim(), got: x0.len() });
    }
    if u.n_channels() != sys.n_inputs() {
        return Err(Error::DimensionMismatch { expected: sys.n_inputs(), got: u.n_channels() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    if u.duration() + STEP_DIVIDES_TOL * duration.max(1.0) < duration {
        return Err(Error::InvalidArgument(format!(
            "input defined on [0, {}] but duration is {duration}",
            u.duration()
        )));
    }
    Ok(())
}

/// Classical fourth-order Runge-Kutta integration on a uniform grid.
pub fn simulate(sys: &SystemModel, u: &InputSignal, x0: &[f64], duration: f64, step: f64) -> Result<Trajectory> {
    validate(sys, u, x0, duration)?;
    let n = step_count(duration, step)?;
    let h = duration / n as f64;
    let lowered = Lowered::new(sys);
    let dim = x0.len();
    let m = sys.n_inputs();

    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(x0.to_vec());

    let mut x = x0.to_vec();
    let mut tmp = vec![0.0; dim];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut uu = vec![0.0; m];
    for s in 0..n {
        let t = s as f64 * h;
        u.eval_into(t, &mut uu);
        lowered.rhs(&x, &uu, &mut k1)?;
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        u.eval_into(t + 0.5 * h, &mut uu);
        lowered.rhs(&tmp, &uu, &mut k2)?;
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        lowered.rhs(&tmp, &uu, &mut k3)?;
        for i in 0..dim {
            tmp[i] = x[i] + h * k3[i];
        }
        u.eval_into(t + h, &mut uu);
        lowered.rhs(&tmp, &uu, &mut k4)?;
        for i in 0..dim {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state component {bad} at t = {}", t + h)));
        }
        times.push(if s + 1 == n { duration } else { (s + 1) as f64 * h });
        states.push(x.clone());
    }
    for f in &lowered.fibers {
        let mut lx = [0.0; 3];
        f.local(&x, &mut lx);
        f.field.check_point(&lx[..f.base.len()])?;
    }
    Ok(Trajectory { times, states, inputs: u.clone(), step: h })
}

/// Fiber increments over `[0, T]` computed by quadrature along the closed-form
/// base path `x(t) = x0 + int_0^t u`, independently of the ODE integrator.
///
/// Composite 5-point Gauss-Legendre on panels of width `step` between input
/// breakpoints, doubled until two successive estimates agree.
pub fn fiber_displacement(
    sys: &SystemModel,
    u: &InputSignal,
    x0: &[f64],
    duration: f64,
    step: f64,
) -> Result<Vec<f64>> {
    validate(sys, u, x0, duration)?;
    step_count(duration, step)?;
    let m = sys.n_inputs();
    let fibers = sys.fibers();
    let mut cuts: Vec<f64> = u.breakpoints().into_iter().filter(|&t| t > 0.0 && t < duration).collect();
    cuts.insert(0, 0.0);
    cuts.push(duration);

    let mut out = Vec::with_capacity(fibers.len());
    let mut xb = vec![0.0; m];
    let mut uu = vec![0.0; m];
    for fiber in &fibers {
        let mut rate = |t: f64| -> Result<f64> {
            u.integral_into(t, &mut xb);
            for (xi, x0i) in xb.iter_mut().zip(x0) {
                *xi += x0i;
            }
            u.eval_into(t, &mut uu);
            fiber.rate(&xb, &uu)
        };
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut panels = (((b - a) / step).round() as usize).max(1);
            let mut prev = composite_gl5(&mut rate, a, b, panels)?;
            loop {
                panels *= 2;
                let next = composite_gl5(&mut rate, a, b, panels)?;
                let done = (next - prev).abs() <= 1e-13 * next.abs().max(1.0) || panels > 1 << 20;
                prev = next;
                if done {
                    break;
                }
            }
            total += prev;
        }
        out.push(total);
    }
    Ok(out)
}

/// Shoelace area of a closed polygon through the given planar samples.
pub fn shoelace_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}
