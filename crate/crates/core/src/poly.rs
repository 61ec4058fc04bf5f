//! Rational normal form used to certify that an expression is identically zero.
//!
//! Transcendental subterms (`sin(..)`, `cos(..)`, `exp(..)`) are treated as
//! opaque atoms keyed by their printed form, so `cos(x1)*x2 - x2*cos(x1)` is
//! recognised as zero while `sin(x1)^2 + cos(x1)^2 - 1` is not.

use std::collections::BTreeMap;

use crate::expr::{Expr, ExprView};

/// Relative cancellation threshold for coefficients.
const CANCEL_TOL: f64 = 1e-10;

type Monomial = Vec<u32>;

/// Coefficient together with the absolute mass of everything summed into it.
#[derive(Debug, Clone, Copy)]
struct Coef {
    value: f64,
    mass: f64,
}

#[derive(Debug, Clone, Default)]
struct Poly {
    terms: BTreeMap<Monomial, Coef>,
}

fn trim(mut m: Monomial) -> Monomial {
    while m.last() == Some(&0) {
        m.pop();
    }
    m
}

impl Poly {
    fn constant(c: f64) -> Self {
        let mut p = Poly::default();
        if c != 0.0 {
            p.terms.insert(Vec::new(), Coef { value: c, mass: c.abs() });
        }
        p
    }

    fn atom(index: usize) -> Self {
        let mut m = vec![0; index + 1];
        m[index] = 1;
        let mut p = Poly::default();
        p.terms.insert(m, Coef { value: 1.0, mass: 1.0 });
        p
    }

    fn add(&self, other: &Poly, sign: f64) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            let e = out.terms.entry(m.clone()).or_insert(Coef { value: 0.0, mass: 0.0 });
            e.value += sign * c.value;
            e.mass += c.mass;
        }
        out
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let len = ma.len().max(mb.len());
                let m: Monomial =
                    (0..len).map(|i| ma.get(i).copied().unwrap_or(0) + mb.get(i).copied().unwrap_or(0)).collect();
                let e = out.terms.entry(trim(m)).or_insert(Coef { value: 0.0, mass: 0.0 });
                e.value += ca.value * cb.value;
                e.mass += ca.mass * cb.mass;
            }
        }
        out
    }

    fn scale(&self, s: f64) -> Poly {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            c.value *= s;
            c.mass *= s.abs();
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.terms.values().all(|c| c.value.abs() <= CANCEL_TOL * c.mass)
    }

    fn pow(&self, n: u32) -> Poly {
        let mut out = Poly::constant(1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Rational {
    num: Poly,
    den: Poly,
}

impl Rational {
    fn poly(p: Poly) -> Self {
        Rational { num: p, den: Poly::constant(1.0) }
    }

    fn add(&self, other: &Rational, sign: f64) -> Rational {
        let num = self.num.mul(&other.den).add(&other.num.mul(&self.den), sign);
        Rational { num, den: self.den.mul(&other.den) }
    }

    fn mul(&self, other: &Rational) -> Rational {
        Rational { num: self.num.mul(&other.num), den: self.den.mul(&other.den) }
    }

    fn div(&self, other: &Rational) -> Rational {
        Rational { num: self.num.mul(&other.den), den: self.den.mul(&other.num) }
    }

    fn powi(&self, n: i32) -> Rational {
        let k = n.unsigned_abs();
        let r = Rational { num: self.num.pow(k), den: self.den.pow(k) };
        if n < 0 {
            Rational { num: r.den, den: r.num }
        } else {
            r
        }
    }
}

struct Builder {
    /// Opaque transcendental atoms, indexed from 3 upwards.
    atoms: Vec<String>,
}

impl Builder {
    fn atom_index(&mut self, e: &Expr) -> usize {
        let key = e.to_string();
        let pos = match self.atoms.iter().position(|a| *a == key) {
            Some(p) => p,
            None => {
                self.atoms.push(key);
                self.atoms.len() - 1
            }
        };
        3 + pos
    }

    fn build(&mut self, e: &Expr) -> Rational {
        match e.view() {
            ExprView::Const(c) => Rational::poly(Poly::constant(c)),
            ExprView::Var(i) => Rational::poly(Poly::atom(i)),
            ExprView::Neg(a) => {
                let r = self.build(a);
                Rational { num: r.num.scale(-1.0), den: r.den }
            }
            ExprView::Call => {
                let idx = self.atom_index(e);
                Rational::poly(Poly::atom(idx))
            }
            ExprView::Add(a, b) => self.build(a).add(&self.build(b), 1.0),
            ExprView::Sub(a, b) => self.build(a).add(&self.build(b), -1.0),
            ExprView::Mul(a, b) => self.build(a).mul(&self.build(b)),
            ExprView::Div(a, b) => self.build(a).div(&self.build(b)),
            ExprView::Pow(a, n) => self.build(a).powi(n),
        }
    }
}

/// Returns true when `e` is certified identically zero wherever it is defined.
///
/// `false` means "no certificate", not "nonzero".
pub fn certify_zero(e: &Expr) -> bool {
    if e.is_zero() {
        return true;
    }
    let mut b = Builder { atoms: Vec::new() };
    let r = b.build(e);
    r.num.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn zero(s: &str) -> bool {
        certify_zero(&parse_expr(s).unwrap())
    }

    #[test]
    fn polynomial_cancellation() {
        assert!(zero("(x1+x2)^2 - x1^2 - 2*x1*x2 - x2^2"));
        assert!(!zero("(x1+x2)^2 - x1^2 - x2^2"));
        assert!(zero("0.1*x1*x3 - x3*x1*0.1"));
    }

    #[test]
    fn rational_cancellation() {
        assert!(zero("x1/(x1^2+x2^2) - x1*(x1^2+x2^2)^-1"));
        assert!(zero("1/x1 - x2/(x1*x2)"));
        assert!(!zero("1/x1 - 1/x2"));
    }

    #[test]
    fn opaque_transcendentals() {
        assert!(zero("cos(x1)*x2 - x2*cos(x1)"));
        assert!(!zero("sin(x1)^2 + cos(x1)^2 - 1"));
    }

    #[test]
    fn mixed_partials_of_rational_potential() {
        let phi = parse_expr("x1^2*x2/(1 + x1^2 + x2^2)").unwrap();
        let a = phi.derivative(0).derivative(1);
        let b = phi.derivative(1).derivative(0);
        assert!(certify_zero(&a.sub(&b)));
    }
}
