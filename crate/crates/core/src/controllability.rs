//! Controllability tests.
//!
//! A fiber coordinate can be steered exactly when some closed base loop has
//! nonzero circulation of its 1-form, equivalently when the curl of the
//! underlying field is nonzero somewhere. [`classify`] probes both: a grid
//! scan of the symbolic curl and a deterministic family of circular loops,
//! backed by a symbolic zero-curl certificate for the negative verdict.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{cr_exprs, Curl, ExcludedSet, VectorField, GUARD_RADIUS};
use crate::quadrature::{gauss_legendre, periodic_trapezoid};
use crate::system::SystemModel;

/// Numeric zero threshold for verdicts.
pub const ZERO_TOL: f64 = 1e-8;
/// Successive-doubling tolerance for loop and contour integrals.
pub const LOOP_TOL: f64 = 1e-10;
pub const LOOP_MIN_POINTS: usize = 256;
pub const LOOP_MAX_POINTS: usize = 1 << 16;

const TAU: f64 = std::f64::consts::TAU;

/// Circle traversed once over `s in [0, 1]`:
/// `center + r cos(2 pi s) e_a + orientation * r sin(2 pi s) e_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub center: Vec<f64>,
    pub radius: f64,
    pub orientation: i8,
    pub plane: (usize, usize),
}

impl Loop {
    pub fn new(center: Vec<f64>, radius: f64, orientation: i8, plane: (usize, usize)) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("loop radius must be positive, got {radius}")));
        }
        if orientation.abs() != 1 {
            return Err(Error::InvalidArgument("loop orientation must be +1 or -1".into()));
        }
        let dim = center.len();
        if plane.0 == plane.1 || plane.0 >= dim || plane.1 >= dim {
            return Err(Error::InvalidArgument(format!("bad loop plane {plane:?} in dimension {dim}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("loop center".into()));
        }
        Ok(Loop { center, radius, orientation, plane })
    }

    /// Counter-clockwise circle in the plane.
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Loop::new(center.to_vec(), radius, 1, (0, 1)).expect("valid planar circle")
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn point_into(&self, s: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.center);
        let (sn, cs) = (TAU * s).sin_cos();
        out[self.plane.0] += self.radius * cs;
        out[self.plane.1] += self.orientation as f64 * self.radius * sn;
    }

    pub fn tangent_into(&self, s: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (sn, cs) = (TAU * s).sin_cos();
        out[self.plane.0] = -TAU * self.radius * sn;
        out[self.plane.1] = self.orientation as f64 * TAU * self.radius * cs;
    }

    /// Distance from the circle to the nearest excluded point (or `x3`-parallel line).
    pub fn distance_to(&self, set: &ExcludedSet) -> f64 {
        set.points.iter().map(|p| self.distance_to_point(p)).fold(f64::INFINITY, f64::min)
    }

    fn distance_to_point(&self, p: &[f64; 2]) -> f64 {
        let (a, b) = self.plane;
        let c = &self.center;
        if self.dim() == 2 || (a < 2 && b < 2) {
            let d = (c[0] - p[0]).hypot(c[1] - p[1]);
            return (d - self.radius).abs();
        }
        // Plane contains the x3 axis; the excluded line is parallel to it.
        let in_plane = if a < 2 { a } else { b };
        let across = 1 - in_plane;
        let perp = (c[across] - p[across]).abs();
        let inside = ((c[in_plane] - p[in_plane]).abs() - self.radius).max(0.0);
        perp.hypot(inside)
    }

    /// True when an excluded point pierces the flat disk bounded by the loop.
    pub fn encloses(&self, set: &ExcludedSet) -> bool {
        let (a, b) = self.plane;
        let c = &self.center;
        set.points.iter().any(|p| {
            if self.dim() == 2 || (a < 2 && b < 2) {
                (c[0] - p[0]).hypot(c[1] - p[1]) < self.radius
            } else {
                let in_plane = if a < 2 { a } else { b };
                let across = 1 - in_plane;
                (c[across] - p[across]).abs() < GUARD_RADIUS && (c[in_plane] - p[in_plane]).abs() < self.radius
            }
        })
    }

    /// Unit normal of the spanned disk, oriented by the traversal direction.
    fn normal(&self) -> [f64; 3] {
        let mut ea = [0.0; 3];
        let mut eb = [0.0; 3];
        ea[self.plane.0] = 1.0;
        eb[self.plane.1] = 1.0;
        let s = self.orientation as f64;
        [s * (ea[1] * eb[2] - ea[2] * eb[1]), s * (ea[2] * eb[0] - ea[0] * eb[2]), s * (ea[0] * eb[1] - ea[1] * eb[0])]
    }
}

fn check_loop(f: &VectorField, gamma: &Loop) -> Result<()> {
    if gamma.dim() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: gamma.dim() });
    }
    if let Some(set) = f.excluded() {
        if gamma.distance_to(set) < GUARD_RADIUS {
            return Err(Error::Excluded { point: gamma.center.clone(), note: set.note.clone() });
        }
    }
    Ok(())
}

struct LoopEstimate {
    value: f64,
    converged: bool,
}

fn loop_estimate(f: &VectorField, gamma: &Loop) -> Result<LoopEstimate> {
    check_loop(f, gamma)?;
    let dim = f.dim();
    let mut x = vec![0.0; dim];
    let mut dx = vec![0.0; dim];
    let est = periodic_trapezoid(
        |s| {
            gamma.point_into(s, &mut x);
            gamma.tangent_into(s, &mut dx);
            Ok::<_, Error>(f.dot_unchecked(&x, &dx))
        },
        LOOP_MIN_POINTS,
        LOOP_MAX_POINTS,
        LOOP_TOL,
        f64::abs,
    )?;
    Ok(LoopEstimate { value: est.value, converged: est.converged })
}

/// Circulation `oint f . dx` by the periodic trapezoid rule with doubling.
pub fn loop_integral(f: &VectorField, gamma: &Loop) -> Result<f64> {
    loop_estimate(f, gamma).map(|e| e.value)
}

/// Line integral and curl flux through the flat disk spanned by the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesCheck {
    pub line: f64,
    pub surface: f64,
    /// An excluded point lies inside the disk: the two sides need not agree.
    pub non_simply_connected: bool,
}

const DISK_RADIAL_NODES: usize = 32;
const DISK_ANGULAR_NODES: usize = 256;

pub fn stokes_check(f: &VectorField, gamma: &Loop) -> Result<StokesCheck> {
    let line = loop_integral(f, gamma)?;
    let caveat = f.excluded().is_some_and(|set| gamma.encloses(set));
    let (rs, ws) = gauss_legendre(DISK_RADIAL_NODES);
    let normal = gamma.normal();
    let curl = f.curl_expr();
    let dim = f.dim();
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    for (r, w) in rs.iter().zip(&ws) {
        let rho = 0.5 * gamma.radius * (r + 1.0);
        let wr = 0.5 * gamma.radius * w * rho;
        let mut ring = 0.0;
        for k in 0..DISK_ANGULAR_NODES {
            let (sn, cs) = (TAU * k as f64 / DISK_ANGULAR_NODES as f64).sin_cos();
            x.copy_from_slice(&gamma.center);
            x[gamma.plane.0] += rho * cs;
            x[gamma.plane.1] += rho * sn;
            let flux = match curl.eval(&x) {
                Curl::Scalar(c) => gamma.orientation as f64 * c,
                Curl::Vector(v) => v[0] * normal[0] + v[1] * normal[1] + v[2] * normal[2],
            };
            if flux.is_finite() {
                ring += flux;
            }
        }
        total += wr * ring * TAU / DISK_ANGULAR_NODES as f64;
    }
    Ok(StokesCheck { line, surface: total, non_simply_connected: caveat })
}

/// Result of a grid scan of `|curl f|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurlScan {
    pub max_abs: f64,
    pub argmax: Vec<f64>,
    pub evaluated: usize,
    /// Grid points skipped because they fall inside the guard radius.
    pub skipped: usize,
}

fn grid_points(bounds: &[(f64, f64)], grid: usize) -> Vec<Vec<f64>> {
    let axis = |&(lo, hi): &(f64, f64)| -> Vec<f64> {
        (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect()
    };
    let axes: Vec<Vec<f64>> = bounds.iter().map(axis).collect();
    let mut pts = vec![Vec::new()];
    for a in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

pub fn curl_scan(f: &VectorField, bounds: &[(f64, f64)], grid: usize) -> Result<CurlScan> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("grid must be at least 2 per axis, got {grid}")));
    }
    if bounds.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: bounds.len() });
    }
    let mut scan = CurlScan { max_abs: 0.0, argmax: bounds.iter().map(|b| b.0).collect(), evaluated: 0, skipped: 0 };
    for p in grid_points(bounds, grid) {
        if f.check_point(&p).is_err() {
            scan.skipped += 1;
            continue;
        }
        let m = f.curl_expr().eval(&p).magnitude();
        scan.evaluated += 1;
        if m > scan.max_abs {
            scan.max_abs = m;
            scan.argmax = p;
        }
    }
    Ok(scan)
}

/// Complex function `F = re + i im` of `z = x1 + i x2` with declared poles.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFn {
    pub re: Expr,
    pub im: Expr,
    pub poles: Option<ExcludedSet>,
}

impl ComplexFn {
    pub fn new(re: Expr, im: Expr) -> Result<Self> {
        for e in [&re, &im] {
            if e.arity() > 2 {
                return Err(Error::VariableOutOfRange { var: e.arity(), dim: 2 });
            }
        }
        Ok(ComplexFn { re, im, poles: None })
    }

    pub fn parse(re: &str, im: &str) -> Result<Self> {
        ComplexFn::new(re.parse()?, im.parse()?)
    }

    pub fn with_poles(mut self, poles: ExcludedSet) -> Self {
        self.poles = Some(poles);
        self
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }

    /// `F(z) = conj(z)^n`.
    pub fn conj_power(n: u32) -> Self {
        let (re, im) = crate::system::conj_power_parts(n);
        ComplexFn { re, im, poles: None }
    }
}

/// `oint F(z) dz` over a planar loop.
pub fn contour_integral(func: &ComplexFn, gamma: &Loop) -> Result<Complex64> {
    if gamma.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: gamma.dim() });
    }
    if let Some(set) = &func.poles {
        if gamma.distance_to(set) < GUARD_RADIUS {
            return Err(Error::Excluded { point: gamma.center.clone(), note: set.note.clone() });
        }
    }
    let mut x = [0.0; 2];
    let mut dx = [0.0; 2];
    let est = periodic_trapezoid(
        |s| {
            gamma.point_into(s, &mut x);
            gamma.tangent_into(s, &mut dx);
            Ok::<_, Error>(func.eval(&x) * Complex64::new(dx[0], dx[1]))
        },
        LOOP_MIN_POINTS,
        LOOP_MAX_POINTS,
        LOOP_TOL,
        |c: Complex64| c.norm(),
    )?;
    Ok(est.value)
}

/// Region scanned by [`holomorphy_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box { x: (f64, f64), y: (f64, f64) },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
}

impl Region {
    fn points(&self, grid: usize) -> Vec<Vec<f64>> {
        match self {
            Region::Box { x, y } => grid_points(&[*x, *y], grid),
            Region::Annulus { center, inner, outer } => grid_points(&[(*inner, *outer), (0.0, TAU)], grid)
                .into_iter()
                .map(|p| vec![center[0] + p[0] * p[1].cos(), center[1] + p[0] * p[1].sin()])
                .collect(),
        }
    }

    fn contains(&self, p: &[f64; 2]) -> bool {
        match self {
            Region::Box { x, y } => (x.0..=x.1).contains(&p[0]) && (y.0..=y.1).contains(&p[1]),
            Region::Annulus { center, inner, outer } => {
                let r = (p[0] - center[0]).hypot(p[1] - center[1]);
                (*inner..=*outer).contains(&r)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolomorphyReport {
    pub holomorphic: bool,
    /// Largest Euclidean norm of the Cauchy-Riemann residual on the grid.
    pub max_residual: f64,
    pub witness: Option<Vec<f64>>,
    pub evaluated: usize,
    pub skipped: usize,
    /// Declared poles; when present, loops around them decide controllability.
    pub poles: Vec<[f64; 2]>,
    pub pole_in_region: bool,
}

const HOLOMORPHY_TOL: f64 = 1e-8;

pub fn holomorphy_test(func: &ComplexFn, region: &Region, grid: usize) -> Result<HolomorphyReport> {
    if grid < 2 {
        return Err(Error::InvalidArgument(format!("grid must be at least 2 per axis, got {grid}")));
    }
    let (r1, r2) = cr_exprs(&func.re, &func.im);
    let mut report = HolomorphyReport {
        holomorphic: true,
        max_residual: 0.0,
        witness: None,
        evaluated: 0,
        skipped: 0,
        poles: func.poles.as_ref().map(|p| p.points.clone()).unwrap_or_default(),
        pole_in_region: false,
    };
    report.pole_in_region = report.poles.iter().any(|p| region.contains(p));
    for p in region.points(grid) {
        if func.poles.as_ref().is_some_and(|set| set.check(&p).is_err()) {
            report.skipped += 1;
            continue;
        }
        let res = r1.eval(&p).hypot(r2.eval(&p));
        report.evaluated += 1;
        if res > report.max_residual {
            report.max_residual = res;
            if res > HOLOMORPHY_TOL && report.witness.is_none() {
                report.witness = Some(p.clone());
            }
        }
    }
    report.holomorphic = report.max_residual <= HOLOMORPHY_TOL;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Controllable,
    Uncontrollable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Controllable => "controllable",
            Verdict::Uncontrollable => "uncontrollable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Evidence that a fiber can be moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// A loop with nonzero circulation.
    Loop { fiber: String, path: Loop, integral: f64 },
    /// A point with nonzero curl.
    Point { fiber: String, point: Vec<f64>, curl_magnitude: f64 },
    /// Two loops whose fiber gains span the plane (complex-plane systems).
    LoopPair { first: Loop, first_gain: [f64; 2], second: Loop, second_gain: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub fiber: String,
    pub probe: String,
    pub value: f64,
    pub location: Option<Vec<f64>>,
    pub detail: String,
}

pub const CAVEAT_NON_SIMPLY_CONNECTED: &str = "non-simply-connected domain";
pub const CAVEAT_EXISTENTIAL: &str = "curl criterion read existentially: nonzero at some probed point suffices";
pub const CAVEAT_WINDING: &str = "loops around declared poles assume winding number 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub caveats: Vec<String>,
    pub evidence: Vec<Evidence>,
}

impl ControllabilityReport {
    pub fn has_caveat(&self, caveat: &str) -> bool {
        self.caveats.iter().any(|c| c == caveat)
    }
}

/// How hard [`classify`] looks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBudget {
    /// Curl scan box is `[-half_width, half_width]^d`.
    pub half_width: f64,
    /// Curl scan points per axis.
    pub grid: usize,
    /// Loop centers per axis (a coarse sub-grid of the box).
    pub loop_centers: usize,
    pub radii: Vec<f64>,
    /// Uniform jitter applied to loop centers other than the origin and poles.
    pub jitter: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        ProbeBudget {
            half_width: 2.0,
            grid: 33,
            loop_centers: 5,
            radii: vec![1.0, 0.5, 0.25],
            jitter: 1e-2,
            seed: 0,
            tol: ZERO_TOL,
        }
    }
}

/// Loops whose contour passes closer than this fraction of the radius to a
/// declared singularity are not used as probes.
const PROBE_MARGIN: f64 = 0.1;

fn probe_loops(dim: usize, excluded: Option<&ExcludedSet>, budget: &ProbeBudget) -> Vec<Loop> {
    let planes: Vec<(usize, usize)> = if dim == 2 { vec![(0, 1)] } else { vec![(0, 1), (0, 2), (1, 2)] };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut centers: Vec<(Vec<f64>, bool)> = Vec::new();
    if let Some(set) = excluded {
        for p in &set.points {
            let mut c = vec![0.0; dim];
            c[0] = p[0];
            c[1] = p[1];
            centers.push((c, false));
        }
    }
    centers.push((vec![0.0; dim], false));
    let n = budget.loop_centers.max(1);
    let axis: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -budget.half_width + 2.0 * budget.half_width * i as f64 / (n - 1) as f64).collect()
    };
    let mut grid = grid_points(&vec![(axis[0], axis[n - 1]); dim], n);
    grid.sort_by(|a, b| {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        na.total_cmp(&nb)
    });
    for c in grid {
        if c.iter().all(|v| v.abs() < 1e-15) {
            continue;
        }
        centers.push((c, true));
    }
    let mut loops = Vec::new();
    for (mut c, jitter) in centers {
        if jitter && budget.jitter > 0.0 {
            for v in c.iter_mut() {
                *v += rng.random_range(-budget.jitter..budget.jitter);
            }
        }
        for &plane in &planes {
            for &r in &budget.radii {
                let gamma = Loop::new(c.clone(), r, 1, plane).expect("probe loop");
                if excluded.is_some_and(|set| gamma.distance_to(set) < PROBE_MARGIN * r) {
                    continue;
                }
                loops.push(gamma);
            }
        }
    }
    loops
}

struct FieldFindings {
    label: String,
    certified_zero: bool,
    excluded: bool,
    scan: CurlScan,
    loops: Vec<(Loop, f64)>,
    first_nonzero: Option<usize>,
    stokes: Option<StokesCheck>,
}

impl FieldFindings {
    fn verdict(&self, tol: f64) -> Verdict {
        if self.first_nonzero.is_some() || self.scan.max_abs > tol {
            Verdict::Controllable
        } else if self.certified_zero {
            Verdict::Uncontrollable
        } else {
            Verdict::Inconclusive
        }
    }

    fn witness(&self, tol: f64) -> Option<Witness> {
        if let Some(i) = self.first_nonzero {
            let (path, integral) = self.loops[i].clone();
            return Some(Witness::Loop { fiber: self.label.clone(), path, integral });
        }
        (self.scan.max_abs > tol).then(|| Witness::Point {
            fiber: self.label.clone(),
            point: self.scan.argmax.clone(),
            curl_magnitude: self.scan.max_abs,
        })
    }

    fn evidence(&self) -> Vec<Evidence> {
        let mut out = vec![
            Evidence {
                fiber: self.label.clone(),
                probe: "symbolic_curl".into(),
                value: if self.certified_zero { 0.0 } else { f64::NAN },
                location: None,
                detail: if self.certified_zero {
                    "curl simplifies to zero".into()
                } else {
                    "no zero-curl certificate".into()
                },
            },
            Evidence {
                fiber: self.label.clone(),
                probe: "curl_scan".into(),
                value: self.scan.max_abs,
                location: Some(self.scan.argmax.clone()),
                detail: format!("{} points evaluated, {} skipped", self.scan.evaluated, self.scan.skipped),
            },
        ];
        let best =
            self.loops.iter().enumerate().max_by(|a, b| a.1 .1.abs().total_cmp(&b.1 .1.abs()).then(b.0.cmp(&a.0)));
        if let Some((i, (gamma, v))) = best {
            out.push(Evidence {
                fiber: self.label.clone(),
                probe: "loop_integral".into(),
                value: *v,
                location: Some(gamma.center.clone()),
                detail: format!(
                    "largest of {} loops: probe {i}, radius {}, plane {:?}",
                    self.loops.len(),
                    gamma.radius,
                    gamma.plane
                ),
            });
        }
        if let Some(s) = &self.stokes {
            out.push(Evidence {
                fiber: self.label.clone(),
                probe: "stokes_surface".into(),
                value: s.surface,
                location: None,
                detail: format!(
                    "line {} vs surface {} on the witness loop{}",
                    crate::json::fmt_f64(s.line),
                    crate::json::fmt_f64(s.surface),
                    if s.non_simply_connected { " (excluded point inside: not trusted)" } else { "" }
                ),
            });
        }
        out
    }
}

fn probe_field(field: &VectorField, label: &str, budget: &ProbeBudget) -> Result<FieldFindings> {
    let dim = field.dim();
    let bounds = vec![(-budget.half_width, budget.half_width); dim];
    let scan = curl_scan(field, &bounds, budget.grid)?;
    let loops = probe_loops(dim, field.excluded(), budget);
    let values: Vec<Option<f64>> =
        loops.par_iter().map(|g| loop_estimate(field, g).ok().filter(|e| e.converged).map(|e| e.value)).collect();
    let loops: Vec<(Loop, f64)> = loops.into_iter().zip(values).filter_map(|(g, v)| v.map(|v| (g, v))).collect();
    let first_nonzero = loops.iter().position(|(_, v)| v.abs() > budget.tol);
    let stokes = first_nonzero.map(|i| stokes_check(field, &loops[i].0)).transpose()?;
    Ok(FieldFindings {
        label: label.to_string(),
        certified_zero: field.curl_expr().certified_zero(),
        excluded: field.excluded().is_some(),
        scan,
        loops,
        first_nonzero,
        stokes,
    })
}

fn base_caveats(excluded: bool) -> Vec<String> {
    let mut c = vec![CAVEAT_EXISTENTIAL.to_string()];
    if excluded {
        c.push(CAVEAT_NON_SIMPLY_CONNECTED.to_string());
        c.push(CAVEAT_WINDING.to_string());
    }
    c
}

/// Decides controllability of the fiber coordinates of `sys`.
///
/// Planar and spatial single-fiber systems follow the curl / loop test on
/// their field (the drift of [`SystemModel::DriftR3`] does not enter).
/// Pairwise systems need every pair to pass. Complex-plane systems need the
/// loop gains `(dw1, dw2)` to span the plane.
pub fn classify(sys: &SystemModel, budget: &ProbeBudget) -> Result<ControllabilityReport> {
    if budget.grid < 2 {
        return Err(Error::InvalidArgument("probe grid must be at least 2".into()));
    }
    match sys {
        SystemModel::ComplexPlane { .. } => classify_complex(sys, budget),
        _ => {
            let fibers = sys.fibers();
            let findings =
                fibers.iter().map(|f| probe_field(&f.field, &f.label, budget)).collect::<Result<Vec<_>>>()?;
            let verdicts: Vec<Verdict> = findings.iter().map(|f| f.verdict(budget.tol)).collect();
            let verdict = if verdicts.iter().all(|v| *v == Verdict::Controllable) {
                Verdict::Controllable
            } else if verdicts.contains(&Verdict::Uncontrollable) {
                Verdict::Uncontrollable
            } else {
                Verdict::Inconclusive
            };
            let witness = match verdict {
                Verdict::Controllable => findings.first().and_then(|f| f.witness(budget.tol)),
                _ => None,
            };
            let excluded = findings.iter().any(|f| f.excluded);
            Ok(ControllabilityReport {
                verdict,
                witness,
                caveats: base_caveats(excluded),
                evidence: findings.iter().flat_map(FieldFindings::evidence).collect(),
            })
        }
    }
}

fn classify_complex(sys: &SystemModel, budget: &ProbeBudget) -> Result<ControllabilityReport> {
    let fibers = sys.fibers();
    let (w1, w2) = (&fibers[0].field, &fibers[1].field);
    let f1 = probe_field(w1, "w1", budget)?;
    let f2 = probe_field(w2, "w2", budget)?;
    let excluded = f1.excluded;
    let mut evidence: Vec<Evidence> = f1.evidence();
    evidence.extend(f2.evidence());

    // Both fibers were probed on the same loop family; pair the gains.
    let gains: Vec<(Loop, [f64; 2])> = f1
        .loops
        .iter()
        .filter_map(|(g, a)| f2.loops.iter().find(|(h, _)| h == g).map(|(_, b)| (g.clone(), [*a, *b])))
        .collect();
    let norm = |v: &[f64; 2]| v[0].hypot(v[1]);
    let lead = gains.iter().enumerate().max_by(|a, b| norm(&a.1 .1).total_cmp(&norm(&b.1 .1)).then(b.0.cmp(&a.0)));
    let mut witness = None;
    if let Some((_, (g0, v0))) = lead.filter(|(_, (_, v))| norm(v) > budget.tol) {
        let unit = [v0[0] / norm(v0), v0[1] / norm(v0)];
        let best = gains
            .iter()
            .map(|(g, v)| (g, v, (unit[0] * v[1] - unit[1] * v[0]).abs()))
            .max_by(|a, b| a.2.total_cmp(&b.2));
        if let Some((g1, v1, cross)) = best {
            evidence.push(Evidence {
                fiber: "w1,w2".into(),
                probe: "gain_span".into(),
                value: cross,
                location: None,
                detail: "largest component of a loop gain orthogonal to the leading gain".into(),
            });
            if cross > budget.tol {
                witness = Some(Witness::LoopPair {
                    first: g0.clone(),
                    first_gain: *v0,
                    second: g1.clone(),
                    second_gain: *v1,
                });
            }
        }
    }
    let verdict = if witness.is_some() {
        Verdict::Controllable
    } else if f1.certified_zero || f2.certified_zero {
        Verdict::Uncontrollable
    } else {
        Verdict::Inconclusive
    };
    Ok(ControllabilityReport { verdict, witness, caveats: base_caveats(excluded), evidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::field::gradient_field;
    use std::f64::consts::PI;

    fn field(c: &[&str]) -> VectorField {
        VectorField::parse(c).unwrap()
    }

    fn punctured_radial() -> VectorField {
        field(&["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]).with_excluded(ExcludedSet::origin())
    }

    fn punctured_angular() -> VectorField {
        field(&["-x2/(x1^2+x2^2)", "x1/(x1^2+x2^2)"]).with_excluded(ExcludedSet::origin())
    }

    #[test]
    fn loop_integral_examples() {
        let unit = Loop::circle([0.0, 0.0], 1.0);
        assert!((loop_integral(&field(&["-x2", "x1"]), &unit).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!(loop_integral(&punctured_radial(), &unit).unwrap().abs() < 1e-12);
        assert!((loop_integral(&punctured_angular(), &unit).unwrap() - 2.0 * PI).abs() < 1e-12);
        let grad = gradient_field(&parse_expr("x1^2*x2").unwrap(), 2).unwrap();
        assert!(loop_integral(&grad, &Loop::circle([0.3, -1.2], 0.7)).unwrap().abs() < 1e-12);
        let cw = Loop::new(vec![0.0, 0.0], 1.0, -1, (0, 1)).unwrap();
        assert!((loop_integral(&field(&["-x2", "x1"]), &cw).unwrap() + 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn loop_through_excluded_point_is_rejected() {
        let r = loop_integral(&punctured_radial(), &Loop::circle([1.0, 0.0], 1.0));
        assert!(matches!(r, Err(Error::Excluded { .. })));
    }

    #[test]
    fn stokes_examples() {
        let s = stokes_check(&field(&["-x2", "x1"]), &Loop::circle([0.0, 0.0], 1.0)).unwrap();
        assert!((s.line - 2.0 * PI).abs() < 1e-12 && (s.surface - 2.0 * PI).abs() < 1e-10);
        assert!(!s.non_simply_connected);
        let s = stokes_check(&field(&["x2^2", "-x1^2"]), &Loop::circle([1.0, 1.0], 1.0)).unwrap();
        assert!((s.line + 4.0 * PI).abs() < 1e-10, "{}", s.line);
        assert!((s.surface + 4.0 * PI).abs() < 1e-10, "{}", s.surface);
        let s = stokes_check(&punctured_radial(), &Loop::circle([0.0, 0.0], 1.0)).unwrap();
        assert!(s.line.abs() < 1e-12 && s.surface.abs() < 1e-12);
        assert!(s.non_simply_connected);
    }

    #[test]
    fn spatial_stokes_in_every_plane() {
        let f = field(&["x2*x3", "-x1^2 + x3", "x1*x2^2"]);
        for plane in [(0, 1), (0, 2), (1, 2), (2, 0)] {
            for o in [1, -1] {
                let g = Loop::new(vec![0.3, -0.2, 0.5], 0.8, o, plane).unwrap();
                let s = stokes_check(&f, &g).unwrap();
                assert!((s.line - s.surface).abs() < 1e-10, "{plane:?} {o}: {s:?}");
            }
        }
    }

    #[test]
    fn curl_scan_examples() {
        let sq = curl_scan(&field(&["x1^2 - x2^2", "2*x1*x2"]), &[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        assert_eq!(sq.max_abs, 4.0);
        assert_eq!(sq.argmax[1].abs(), 1.0);
        let osc = curl_scan(&field(&["x2^2", "-x1^2"]), &[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        assert_eq!(osc.max_abs, 4.0);
        assert_eq!(osc.argmax[0], osc.argmax[1]);
        assert_eq!(osc.argmax[0].abs(), 1.0);
        let grad = gradient_field(&parse_expr("x1^3*x2 - x2^2").unwrap(), 2).unwrap();
        assert!(curl_scan(&grad, &[(-2.0, 2.0), (-2.0, 2.0)], 9).unwrap().max_abs < 1e-10);
        let p = curl_scan(&punctured_radial(), &[(-1.0, 1.0), (-1.0, 1.0)], 3).unwrap();
        assert_eq!(p.skipped, 1);
        assert!(curl_scan(&grad, &[(-1.0, 1.0), (-1.0, 1.0)], 1).is_err());
    }

    #[test]
    fn contour_integral_examples() {
        let unit = Loop::circle([0.0, 0.0], 1.0);
        let z2 = ComplexFn::parse("x1^2 - x2^2", "2*x1*x2").unwrap();
        assert!(contour_integral(&z2, &unit).unwrap().norm() < 1e-12);
        // 1 / (z - a) with a = 0.3 + 0.2i
        let inv =
            ComplexFn::parse("(x1 - 0.3)/((x1 - 0.3)^2 + (x2 - 0.2)^2)", "-(x2 - 0.2)/((x1 - 0.3)^2 + (x2 - 0.2)^2)")
                .unwrap()
                .with_poles(ExcludedSet { points: vec![[0.3, 0.2]], note: "pole at a".into() });
        let v = contour_integral(&inv, &unit).unwrap();
        assert!((v - Complex64::new(0.0, 2.0 * PI)).norm() < 1e-10, "{v}");
        let on_pole = contour_integral(&inv, &Loop::circle([0.3, 1.2], 1.0));
        assert!(matches!(on_pole, Err(Error::Excluded { .. })));
    }

    #[test]
    fn holomorphy_examples() {
        let bx = Region::Box { x: (-2.0, 2.0), y: (-2.0, 2.0) };
        let z2 = ComplexFn::parse("x1^2 - x2^2", "2*x1*x2").unwrap();
        assert!(holomorphy_test(&z2, &bx, 17).unwrap().holomorphic);
        let conj = ComplexFn::parse("x1", "-x2").unwrap();
        let r = holomorphy_test(&conj, &bx, 17).unwrap();
        assert!(!r.holomorphic);
        assert!((r.max_residual - 2.0).abs() < 1e-15);
        assert!(r.witness.is_some());
        let inv = ComplexFn::parse("x1/(x1^2+x2^2)", "-x2/(x1^2+x2^2)").unwrap().with_poles(ExcludedSet::origin());
        let ann = Region::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 2.0 };
        let r = holomorphy_test(&inv, &ann, 25).unwrap();
        assert!(r.holomorphic, "{}", r.max_residual);
        assert_eq!(r.poles, vec![[0.0, 0.0]]);
        assert!(!r.pole_in_region);
        let r = holomorphy_test(&inv, &bx, 5).unwrap();
        assert!(r.pole_in_region);
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn classify_examples() {
        let budget = ProbeBudget::default();
        let classic = classify(&SystemModel::Classic, &budget).unwrap();
        assert_eq!(classic.verdict, Verdict::Controllable);
        match &classic.witness {
            Some(Witness::Loop { path, integral, .. }) => {
                assert_eq!(*path, Loop::circle([0.0, 0.0], 1.0));
                assert!((integral - 2.0 * PI).abs() < 1e-10);
            }
            other => panic!("unexpected witness {other:?}"),
        }
        assert!(classic.has_caveat(CAVEAT_EXISTENTIAL));

        let punctured = classify(&SystemModel::general_r2(punctured_radial()).unwrap(), &budget).unwrap();
        assert_eq!(punctured.verdict, Verdict::Uncontrollable);
        assert!(punctured.has_caveat(CAVEAT_NON_SIMPLY_CONNECTED));
        assert!(punctured.witness.is_none());

        let osc = classify(&SystemModel::general_r2(field(&["x2^2", "-x1^2"])).unwrap(), &budget).unwrap();
        assert_eq!(osc.verdict, Verdict::Controllable);

        let re_fiber = classify(&SystemModel::general_r2(field(&["x1", "x2"])).unwrap(), &budget).unwrap();
        assert_eq!(re_fiber.verdict, Verdict::Uncontrollable);

        let angular = classify(&SystemModel::general_r2(punctured_angular()).unwrap(), &budget).unwrap();
        assert_eq!(angular.verdict, Verdict::Controllable);
    }

    #[test]
    fn transcendental_without_certificate_is_inconclusive_when_flat() {
        // Curl is sin^2 + cos^2 - 1 in disguise: numerically zero, no certificate.
        let f = field(&["-x2*(sin(x1)^2 + cos(x1)^2 - 1)", "0"]);
        let r = classify(&SystemModel::general_r2(f).unwrap(), &ProbeBudget::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn pairwise_needs_every_pair() {
        use std::collections::BTreeMap;
        let budget = ProbeBudget { loop_centers: 3, ..ProbeBudget::default() };
        let r = classify(&SystemModel::generalized_rm(3).unwrap(), &budget).unwrap();
        assert_eq!(r.verdict, Verdict::Controllable);
        let mut fields: BTreeMap<_, _> = crate::system::pairs(3).map(|p| (p, field(&["x2^2", "-x1^2"]))).collect();
        fields.insert((1, 2), field(&["2*x1", "2*x2"]));
        let r = classify(&SystemModel::pairwise(3, fields).unwrap(), &budget).unwrap();
        assert_eq!(r.verdict, Verdict::Uncontrollable);
    }

    #[test]
    fn complex_plane_verdicts() {
        let budget = ProbeBudget { loop_centers: 3, ..ProbeBudget::default() };
        for n in 2..=3 {
            let r = classify(&SystemModel::conj_power(n), &budget).unwrap();
            assert_eq!(r.verdict, Verdict::Controllable, "n = {n}");
            assert!(matches!(r.witness, Some(Witness::LoopPair { .. })));
        }
        let conj = classify(&SystemModel::conj_power(1), &budget).unwrap();
        assert_eq!(conj.verdict, Verdict::Uncontrollable);
        let z2 = SystemModel::complex_plane(parse_expr("x1^2 - x2^2").unwrap(), parse_expr("2*x1*x2").unwrap(), None)
            .unwrap();
        assert_eq!(classify(&z2, &budget).unwrap().verdict, Verdict::Uncontrollable);
    }

    #[test]
    fn spatial_and_drift_variants() {
        let budget = ProbeBudget { loop_centers: 3, grid: 9, ..ProbeBudget::default() };
        let helical = field(&["-x2", "x1", "0"]);
        let r = classify(&SystemModel::general_r3(helical.clone()).unwrap(), &budget).unwrap();
        assert_eq!(r.verdict, Verdict::Controllable);
        let grad = gradient_field(&parse_expr("x1*x2*x3 + x3^2").unwrap(), 3).unwrap();
        let r = classify(&SystemModel::drift_r3(parse_expr("x1").unwrap(), grad).unwrap(), &budget).unwrap();
        assert_eq!(r.verdict, Verdict::Uncontrollable);
        let r = classify(&SystemModel::drift_r3(parse_expr("x1").unwrap(), helical).unwrap(), &budget).unwrap();
        assert_eq!(r.verdict, Verdict::Controllable);
    }
}
