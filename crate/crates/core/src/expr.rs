//! Scalar expressions over the state variables `x1`, `x2`, `x3`.
//!
//! Expressions are small immutable trees. Construction goes through smart
//! constructors that fold constants and drop `0`/`1` identities, which keeps
//! symbolic derivatives readable without pretending to be a CAS.

use std::fmt;
use std::sync::Arc;

use crate::error::Error;

/// Unary functions accepted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Expr),
    Call(Func, Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
}

/// Parsed arithmetic expression in the variables `x1..x3`.
///
/// Cloning is cheap: subtrees are reference counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn node(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn constant(c: f64) -> Self {
        Self::node(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Variable `x{index+1}`; `index` is zero based and must be below 3.
    pub fn var(index: usize) -> Self {
        assert!(index < 3, "only x1, x2, x3 exist");
        Self::node(Node::Var(index))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// True when the tree folded to the literal `0`.
    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn neg(&self) -> Self {
        match &*self.0 {
            Node::Const(c) => Self::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Self::node(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, rhs: &Expr) -> Self {
        match (self.as_constant(), rhs.as_constant()) {
            (Some(a), Some(b)) => Self::constant(a + b),
            (Some(0.0), _) => rhs.clone(),
            (_, Some(0.0)) => self.clone(),
            _ => match &*rhs.0 {
                Node::Neg(inner) => Self::node(Node::Sub(self.clone(), inner.clone())),
                _ => Self::node(Node::Add(self.clone(), rhs.clone())),
            },
        }
    }

    pub fn sub(&self, rhs: &Expr) -> Self {
        match (self.as_constant(), rhs.as_constant()) {
            (Some(a), Some(b)) => Self::constant(a - b),
            (Some(0.0), _) => rhs.neg(),
            (_, Some(0.0)) => self.clone(),
            _ => match &*rhs.0 {
                Node::Neg(inner) => Self::node(Node::Add(self.clone(), inner.clone())),
                _ => Self::node(Node::Sub(self.clone(), rhs.clone())),
            },
        }
    }

    pub fn mul(&self, rhs: &Expr) -> Self {
        match (self.as_constant(), rhs.as_constant()) {
            (Some(a), Some(b)) => Self::constant(a * b),
            (Some(0.0), _) => Self::zero(),
            (_, Some(0.0)) => Self::zero(),
            (Some(1.0), _) => rhs.clone(),
            (_, Some(1.0)) => self.clone(),
            (Some(-1.0), _) => rhs.neg(),
            (_, Some(-1.0)) => self.neg(),
            _ => Self::node(Node::Mul(self.clone(), rhs.clone())),
        }
    }

    pub fn div(&self, rhs: &Expr) -> Self {
        match (self.as_constant(), rhs.as_constant()) {
            (Some(a), Some(b)) if b != 0.0 => Self::constant(a / b),
            (Some(0.0), _) => Self::zero(),
            (_, Some(1.0)) => self.clone(),
            _ => Self::node(Node::Div(self.clone(), rhs.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        if n == 1 {
            return self.clone();
        }
        if let Some(c) = self.as_constant() {
            return Self::constant(c.powi(n));
        }
        Self::node(Node::Pow(self.clone(), n))
    }

    pub fn call(func: Func, arg: &Expr) -> Self {
        match arg.as_constant() {
            Some(c) => Self::constant(func.apply(c)),
            None => Self::node(Node::Call(func, arg.clone())),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::constant(c).mul(self)
    }

    /// Evaluates the expression. `x` must hold at least `max_var() + 1` entries.
    ///
    /// Division by zero follows IEEE semantics; callers guard singular sets.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Neg(a) => -a.eval(x),
            Node::Call(f, a) => f.apply(a.eval(x)),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Pow(a, n) => a.eval(x).powi(*n),
        }
    }

    /// Highest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match &*self.0 {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.max_var(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    /// Number of variables an evaluation point needs.
    pub fn arity(&self) -> usize {
        self.max_var().map_or(0, |i| i + 1)
    }

    /// Symbolic partial derivative with respect to `x{var+1}`.
    pub fn derivative(&self, var: usize) -> Expr {
        match &*self.0 {
            Node::Const(_) => Self::zero(),
            Node::Var(i) => {
                if *i == var {
                    Self::one()
                } else {
                    Self::zero()
                }
            }
            Node::Neg(a) => a.derivative(var).neg(),
            Node::Call(f, a) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    return Self::zero();
                }
                let outer = match f {
                    Func::Sin => Self::call(Func::Cos, a),
                    Func::Cos => Self::call(Func::Sin, a).neg(),
                    Func::Exp => self.clone(),
                };
                outer.mul(&da)
            }
            Node::Add(a, b) => a.derivative(var).add(&b.derivative(var)),
            Node::Sub(a, b) => a.derivative(var).sub(&b.derivative(var)),
            Node::Mul(a, b) => {
                let left = a.derivative(var).mul(b);
                let right = a.mul(&b.derivative(var));
                left.add(&right)
            }
            Node::Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_zero() {
                    return da.div(b);
                }
                da.mul(b).sub(&a.mul(&db)).div(&b.powi(2))
            }
            Node::Pow(a, n) => {
                let da = a.derivative(var);
                if da.is_zero() {
                    return Self::zero();
                }
                Self::constant(*n as f64).mul(&a.powi(n - 1)).mul(&da)
            }
        }
    }

    /// Renames variables: `x{i+1}` becomes `x{map[i]+1}`.
    pub fn remap_vars(&self, map: &[usize]) -> Expr {
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(i) => Self::var(map[*i]),
            Node::Neg(a) => a.remap_vars(map).neg(),
            Node::Call(f, a) => Self::call(*f, &a.remap_vars(map)),
            Node::Add(a, b) => a.remap_vars(map).add(&b.remap_vars(map)),
            Node::Sub(a, b) => a.remap_vars(map).sub(&b.remap_vars(map)),
            Node::Mul(a, b) => a.remap_vars(map).mul(&b.remap_vars(map)),
            Node::Div(a, b) => a.remap_vars(map).div(&b.remap_vars(map)),
            Node::Pow(a, n) => a.remap_vars(map).powi(*n),
        }
    }

    /// Structural view used by the rational normal form.
    pub(crate) fn view(&self) -> ExprView<'_> {
        match &*self.0 {
            Node::Const(c) => ExprView::Const(*c),
            Node::Var(i) => ExprView::Var(*i),
            Node::Neg(a) => ExprView::Neg(a),
            Node::Call(..) => ExprView::Call,
            Node::Add(a, b) => ExprView::Add(a, b),
            Node::Sub(a, b) => ExprView::Sub(a, b),
            Node::Mul(a, b) => ExprView::Mul(a, b),
            Node::Div(a, b) => ExprView::Div(a, b),
            Node::Pow(a, n) => ExprView::Pow(a, *n),
        }
    }

    fn precedence(&self) -> u8 {
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            Node::Const(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

pub(crate) enum ExprView<'a> {
    Const(f64),
    Var(usize),
    Neg(&'a Expr),
    /// Transcendental call, an opaque atom.
    Call,
    Add(&'a Expr, &'a Expr),
    Sub(&'a Expr, &'a Expr),
    Mul(&'a Expr, &'a Expr),
    Div(&'a Expr, &'a Expr),
    Pow(&'a Expr, i32),
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints text that parses back to an equal-valued tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if *c < 0.0 {
                    write!(f, "-{:?}", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_operand(f, a, 4)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Add(a, b) => {
                write_operand(f, a, 1)?;
                f.write_str(" + ")?;
                write_operand(f, b, 2)
            }
            Node::Sub(a, b) => {
                write_operand(f, a, 1)?;
                f.write_str(" - ")?;
                write_operand(f, b, 2)
            }
            Node::Mul(a, b) => {
                write_operand(f, a, 2)?;
                f.write_str("*")?;
                write_operand(f, b, 3)
            }
            Node::Div(a, b) => {
                write_operand(f, a, 2)?;
                f.write_str("/")?;
                write_operand(f, b, 3)
            }
            Node::Pow(a, n) => {
                write_operand(f, a, 5)?;
                write!(f, "^{n}")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_expr(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses the calculator grammar:
///
/// ```text
/// expr   := term (('+'|'-') term)*
/// term   := factor (('*'|'/') factor)*
/// factor := ('-')? atom ('^' integer)?
/// atom   := number | 'x1' | 'x2' | 'x3' | func '(' expr ')' | '(' expr ')'
/// func   := 'sin' | 'cos' | 'exp'
/// ```
///
/// Offsets in errors are byte offsets into `text`.
pub fn parse_expr(text: &str) -> Result<Expr, Error> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax(&self, message: &str) -> Error {
        Error::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn expr(&mut self) -> Result<Expr, Error> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == b'+' { acc.add(&rhs) } else { acc.sub(&rhs) };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr, Error> {
        let mut acc = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = if op == b'*' { acc.mul(&rhs) } else { acc.div(&rhs) };
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expr, Error> {
        let negate = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let mut base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let n = self.integer_exponent()?;
            base = base.powi(n);
        }
        Ok(if negate { base.neg() } else { base })
    }

    fn integer_exponent(&mut self) -> Result<i32, Error> {
        self.skip_ws();
        let start = self.pos;
        let mut end = start;
        if self.src.get(end) == Some(&b'-') {
            end += 1;
        }
        let digits_start = end;
        while end < self.src.len() && self.src[end].is_ascii_digit() {
            end += 1;
        }
        if end == digits_start {
            return Err(self.syntax("expected integer exponent"));
        }
        if matches!(self.src.get(end), Some(b'.' | b'e' | b'E')) {
            return Err(Error::NonIntegerExponent { offset: start });
        }
        let text = std::str::from_utf8(&self.src[start..end]).expect("ascii digits");
        let n = text
            .parse::<i32>()
            .map_err(|_| Error::Syntax { offset: start, message: "exponent out of range".into() })?;
        self.pos = end;
        Ok(n)
    }

    fn atom(&mut self) -> Result<Expr, Error> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, Error> {
        let start = self.pos;
        let mut end = start;
        let src = self.src;
        while end < src.len() && (src[end].is_ascii_digit() || src[end] == b'.') {
            end += 1;
        }
        if end < src.len() && matches!(src[end], b'e' | b'E') {
            let mut k = end + 1;
            if k < src.len() && matches!(src[k], b'+' | b'-') {
                k += 1;
            }
            if k < src.len() && src[k].is_ascii_digit() {
                while k < src.len() && src[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = std::str::from_utf8(&src[start..end]).expect("ascii number");
        let value = text
            .parse::<f64>()
            .map_err(|_| Error::Syntax { offset: start, message: format!("malformed number '{text}'") })?;
        self.pos = end;
        Ok(Expr::constant(value))
    }

    fn identifier(&mut self) -> Result<Expr, Error> {
        let start = self.pos;
        let mut end = start;
        while end < self.src.len() && self.src[end].is_ascii_alphanumeric() {
            end += 1;
        }
        let name = std::str::from_utf8(&self.src[start..end]).expect("ascii identifier");
        self.pos = end;
        let func = match name {
            "x1" => return Ok(Expr::var(0)),
            "x2" => return Ok(Expr::var(1)),
            "x3" => return Ok(Expr::var(2)),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            _ => return Err(Error::UnknownIdentifier { name: name.to_string(), offset: start }),
        };
        if self.peek() != Some(b'(') {
            return Err(self.syntax("expected '(' after function name"));
        }
        self.pos += 1;
        let arg = self.expr()?;
        if self.peek() != Some(b')') {
            return Err(self.syntax("expected ')'"));
        }
        self.pos += 1;
        Ok(Expr::call(func, &arg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn evaluates_example_fields() {
        assert_eq!(p("x1^2 - x2^2").eval(&[1.0, 2.0]), -3.0);
        assert_eq!(p("2*x1*x2").eval(&[1.0, 2.0]), 4.0);
        assert!((p("x1/(x1^2+x2^2)").eval(&[1.0, 2.0]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dangling_operator_reports_offset() {
        match parse_expr("x1 +") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_identifiers_and_fractional_powers() {
        assert!(matches!(
            parse_expr("x4 + 1"),
            Err(Error::UnknownIdentifier { ref name, offset: 0 }) if name == "x4"
        ));
        assert!(matches!(parse_expr("tan(x1)"), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse_expr("x1^2.5"), Err(Error::NonIntegerExponent { offset: 3 })));
        assert!(matches!(parse_expr("x1^x2"), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expr("(x1"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse_expr("x1 x2"), Err(Error::Syntax { offset: 3, .. })));
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(p("-x1^2").eval(&[3.0]), -9.0);
        assert_eq!(p("2*-x1").eval(&[3.0]), -6.0);
        assert_eq!(p("x1^-1").eval(&[4.0]), 0.25);
    }

    #[test]
    fn functions_and_numbers() {
        let e = p("sin(x1)*cos(x2) + exp(0.5e1*x3)");
        let x = [0.3, -0.7, 0.1];
        let want = 0.3f64.sin() * (-0.7f64).cos() + (0.5f64).exp();
        assert!((e.eval(&x) - want).abs() < 1e-14);
        assert_eq!(p(" 1.25 ").eval(&[]), 1.25);
    }

    #[test]
    fn derivative_of_constant_is_literal_zero() {
        assert!(p("3.5").derivative(0).is_zero());
        assert!(p("x2^3").derivative(0).is_zero());
        assert!(p("sin(x2)").derivative(0).is_zero());
    }

    #[test]
    fn derivative_values() {
        let e = p("x1^2*x2 + sin(x1*x2) - x3/x1");
        let x: [f64; 3] = [0.7, -1.3, 2.0];
        let d0 = 2.0 * x[0] * x[1] + (x[0] * x[1]).cos() * x[1] + x[2] / (x[0] * x[0]);
        assert!((e.derivative(0).eval(&x) - d0).abs() < 1e-13);
        let d2 = -1.0 / x[0];
        assert!((e.derivative(2).eval(&x) - d2).abs() < 1e-13);
    }

    #[test]
    fn display_round_trips() {
        for s in
            ["x1^2 - x2^2", "-(x1 - x2)^3/(1 + x3)", "2*-x1", "exp(-x1)*cos(x2 - 1)", "x1 - (x2 - x3)", "-2.5*x1^-2"]
        {
            let e = p(s);
            let back = p(&e.to_string());
            let x = [0.37, -1.1, 0.8];
            assert!((e.eval(&x) - back.eval(&x)).abs() < 1e-14, "{s} -> {e}");
        }
    }

    #[test]
    fn remap_swaps_variables() {
        let e = p("x1 - 2*x2");
        assert_eq!(e.remap_vars(&[1, 0]).eval(&[1.0, 5.0]), 5.0 - 2.0);
    }
}
