//! Vector fields on the plane and in space, with their analytic curl and
//! divergence, plus the potential-based constructions used to build
//! controllable and uncontrollable examples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::poly::certify_zero;

/// Distance below which a point counts as lying on an excluded set.
pub const GUARD_RADIUS: f64 = 1e-9;

/// A point in state coordinates. Entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("point coordinate {bad}")));
        }
        Ok(Point(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<[f64; 2]> for Point {
    fn from(c: [f64; 2]) -> Self {
        Point(c.to_vec())
    }
}

impl From<[f64; 3]> for Point {
    fn from(c: [f64; 3]) -> Self {
        Point(c.to_vec())
    }
}

/// Declared singular set of a field.
///
/// Each entry is a point of the `(x1, x2)` plane. For three dimensional
/// fields an entry removes the whole line parallel to the `x3` axis, which is
/// how the punctured-plane examples extend to `R^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSet {
    pub points: Vec<[f64; 2]>,
    pub note: String,
}

impl ExcludedSet {
    pub fn origin() -> Self {
        ExcludedSet { points: vec![[0.0, 0.0]], note: "x1^2+x2^2=0 excluded".into() }
    }

    /// Planar distance from `p` (first two coordinates) to the nearest excluded point.
    pub fn distance(&self, p: &[f64]) -> f64 {
        self.points.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self, p: &[f64]) -> Result<()> {
        if self.distance(p) < GUARD_RADIUS {
            return Err(Error::Excluded { point: p.to_vec(), note: self.note.clone() });
        }
        Ok(())
    }
}

/// Curl value: a scalar for planar fields, a vector in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Curl {
    Scalar(f64),
    Vector([f64; 3]),
}

impl Curl {
    pub fn magnitude(&self) -> f64 {
        match self {
            Curl::Scalar(c) => c.abs(),
            Curl::Vector(v) => (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurlExpr {
    Scalar(Expr),
    Vector([Expr; 3]),
}

impl CurlExpr {
    pub fn eval(&self, x: &[f64]) -> Curl {
        match self {
            CurlExpr::Scalar(e) => Curl::Scalar(e.eval(x)),
            CurlExpr::Vector(v) => Curl::Vector([v[0].eval(x), v[1].eval(x), v[2].eval(x)]),
        }
    }

    /// Symbolic certificate that the curl vanishes identically.
    pub fn certified_zero(&self) -> bool {
        match self {
            CurlExpr::Scalar(e) => certify_zero(e),
            CurlExpr::Vector(v) => v.iter().all(certify_zero),
        }
    }
}

/// A 2- or 3-component field of scalar expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
    excluded: Option<ExcludedSet>,
    curl: CurlExpr,
    divergence: Expr,
}

fn planar_curl(c: &[Expr]) -> Expr {
    c[1].derivative(0).sub(&c[0].derivative(1))
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Result<Self> {
        let dim = components.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("field dimension must be 2 or 3, got {dim}")));
        }
        for c in &components {
            if c.arity() > dim {
                return Err(Error::VariableOutOfRange { var: c.arity(), dim });
            }
        }
        let curl = if dim == 2 {
            CurlExpr::Scalar(planar_curl(&components))
        } else {
            let d = |i: usize, j: usize| components[i].derivative(j);
            CurlExpr::Vector([d(2, 1).sub(&d(1, 2)), d(0, 2).sub(&d(2, 0)), d(1, 0).sub(&d(0, 1))])
        };
        let divergence = components.iter().enumerate().fold(Expr::zero(), |acc, (i, c)| acc.add(&c.derivative(i)));
        Ok(VectorField { components, excluded: None, curl, divergence })
    }

    /// Parses each component with the expression grammar.
    pub fn parse(components: &[&str]) -> Result<Self> {
        let exprs = components.iter().map(|s| s.parse()).collect::<Result<Vec<Expr>>>()?;
        Self::new(exprs)
    }

    pub fn with_excluded(mut self, set: ExcludedSet) -> Self {
        self.excluded = Some(set);
        self
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn excluded(&self) -> Option<&ExcludedSet> {
        self.excluded.as_ref()
    }

    pub fn curl_expr(&self) -> &CurlExpr {
        &self.curl
    }

    pub fn divergence_expr(&self) -> &Expr {
        &self.divergence
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: p.len() });
        }
        match &self.excluded {
            Some(set) => set.check(p),
            None => Ok(()),
        }
    }

    /// Guard check for an evaluation point; `p` may carry extra trailing coordinates.
    pub fn check_point(&self, p: &[f64]) -> Result<()> {
        match &self.excluded {
            Some(set) => set.check(p),
            None => Ok(()),
        }
    }

    pub fn eval(&self, p: &Point) -> Result<Vec<f64>> {
        self.check(p.coords())?;
        Ok(self.components.iter().map(|c| c.eval(p.coords())).collect())
    }

    /// Dot product `f(x) . v` without guard checks; callers check first.
    pub(crate) fn dot_unchecked(&self, x: &[f64], v: &[f64]) -> f64 {
        self.components.iter().zip(v).map(|(c, vi)| c.eval(x) * vi).sum()
    }

    pub fn curl(&self, p: &Point) -> Result<Curl> {
        self.check(p.coords())?;
        Ok(self.curl.eval(p.coords()))
    }

    pub fn divergence(&self, p: &Point) -> Result<f64> {
        self.check(p.coords())?;
        Ok(self.divergence.eval(p.coords()))
    }

    /// `(-f2, f1)` for a planar field.
    pub fn rotated(&self) -> Result<VectorField> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: self.dim() });
        }
        let f = VectorField::new(vec![self.components[1].neg(), self.components[0].clone()])?;
        Ok(self.carry_excluded(f))
    }

    /// Componentwise sum; the excluded sets are merged.
    pub fn plus(&self, other: &VectorField) -> Result<VectorField> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let comps = self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect();
        let mut f = VectorField::new(comps)?;
        f.excluded = match (&self.excluded, &other.excluded) {
            (Some(a), Some(b)) => Some(ExcludedSet {
                points: a.points.iter().chain(&b.points).copied().collect(),
                note: format!("{}; {}", a.note, b.note),
            }),
            (a, b) => a.clone().or_else(|| b.clone()),
        };
        Ok(f)
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        let comps = self.components.iter().map(|e| e.scale(c)).collect();
        self.carry_excluded(VectorField::new(comps).expect("same shape"))
    }

    /// Relabels coordinates: component `i` and variable `x{i+1}` move to slot `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<VectorField> {
        let n = self.dim();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        let mut comps = vec![Expr::zero(); n];
        for (i, c) in self.components.iter().enumerate() {
            comps[perm[i]] = c.remap_vars(perm);
        }
        let mut f = VectorField::new(comps)?;
        if let Some(set) = &self.excluded {
            if n == 2 {
                let points = set.points.iter().map(|p| {
                    let mut q = [0.0; 2];
                    q[perm[0]] = p[0];
                    q[perm[1]] = p[1];
                    q
                });
                f.excluded = Some(ExcludedSet { points: points.collect(), note: set.note.clone() });
            } else {
                f.excluded = Some(set.clone());
            }
        }
        Ok(f)
    }

    fn carry_excluded(&self, mut f: VectorField) -> VectorField {
        f.excluded = self.excluded.clone();
        f
    }
}

/// Gradient of a scalar potential in `dim` variables.
pub fn gradient_field(phi: &Expr, dim: usize) -> Result<VectorField> {
    if phi.arity() > dim {
        return Err(Error::VariableOutOfRange { var: phi.arity(), dim });
    }
    VectorField::new((0..dim).map(|i| phi.derivative(i)).collect())
}

/// Multiplies component `i` by `signs[i]`, i.e. `f -> H f` for a diagonal
/// sign matrix `H`.
pub fn signed_flip(f: &VectorField, signs: &[i8]) -> Result<VectorField> {
    if signs.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: signs.len() });
    }
    if signs.iter().any(|s| s.abs() != 1) {
        return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
    }
    let comps = f.components.iter().zip(signs).map(|(c, &s)| if s < 0 { c.neg() } else { c.clone() }).collect();
    Ok(f.carry_excluded(VectorField::new(comps)?))
}

/// Cauchy-Riemann residual of `F = re + i im` at `p`:
/// `(d re/dx1 - d im/dx2, d im/dx1 + d re/dx2)`.
pub fn cauchy_riemann_residual(re: &Expr, im: &Expr, excluded: Option<&ExcludedSet>, p: &Point) -> Result<(f64, f64)> {
    let x = p.coords();
    if x.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    for e in [re, im] {
        if e.arity() > 2 {
            return Err(Error::VariableOutOfRange { var: e.arity(), dim: 2 });
        }
    }
    if let Some(set) = excluded {
        set.check(x)?;
    }
    let (r1, r2) = cr_exprs(re, im);
    Ok((r1.eval(x), r2.eval(x)))
}

pub(crate) fn cr_exprs(re: &Expr, im: &Expr) -> (Expr, Expr) {
    let r1 = re.derivative(0).sub(&im.derivative(1));
    let r2 = im.derivative(0).add(&re.derivative(1));
    (r1, r2)
}

/// Central difference with step `1e-6 * max(1, |x_var|)`.
pub fn numeric_partial(e: &Expr, p: &[f64], var: usize) -> f64 {
    let h = 1e-6 * p[var].abs().max(1.0);
    let mut a = p.to_vec();
    let mut b = p.to_vec();
    a[var] += h;
    b[var] -= h;
    (e.eval(&a) - e.eval(&b)) / (2.0 * h)
}
