//! A small expression language for vector fields, resets and coupling maps.
//!
//! Expressions are parsed once and then bound against an ordered list of
//! variable names ([`CompiledExpr`]); bound expressions evaluate on plain
//! coordinate slices and differentiate exactly with dual numbers.
//!
//! At the non-differentiable points of `abs`, `min` and `max` the derivative
//! of the left branch is used: `abs` at `0` differentiates as `-x`, and
//! `min(a, b)` / `max(a, b)` at `a == b` differentiate as `a`.

mod dual;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

pub use dual::Dual;
pub use parse::{parse, ParseError};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Tanh,
        Func::Abs,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    /// Free variables in first-occurrence order.
    /// Coefficients and constant term when the expression is affine in
    /// `vars` with constant coefficients.
    pub fn affine_in(&self, vars: &[String]) -> Option<(Vec<f64>, f64)> {
        let n = vars.len();
        if self.variables().is_empty() {
            let c = self.bind(&[]).ok()?.eval(&[]);
            return c.is_finite().then(|| (vec![0.0; n], c));
        }
        let is_const = |a: &[f64]| a.iter().all(|&v| v == 0.0);
        match self {
            Expr::Num(_) => unreachable!("constant handled above"),
            Expr::Var(v) => {
                let i = vars.iter().position(|w| w == v)?;
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                Some((a, 0.0))
            }
            Expr::Neg(e) => {
                let (a, c) = e.affine_in(vars)?;
                Some((a.iter().map(|v| -v).collect(), -c))
            }
            Expr::Bin(op, l, r) => {
                let (a, c) = l.affine_in(vars)?;
                let (b, d) = r.affine_in(vars)?;
                match op {
                    BinOp::Add => Some((a.iter().zip(&b).map(|(x, y)| x + y).collect(), c + d)),
                    BinOp::Sub => Some((a.iter().zip(&b).map(|(x, y)| x - y).collect(), c - d)),
                    BinOp::Mul if is_const(&a) => Some((b.iter().map(|v| c * v).collect(), c * d)),
                    BinOp::Mul if is_const(&b) => Some((a.iter().map(|v| v * d).collect(), c * d)),
                    BinOp::Div if is_const(&b) && d != 0.0 => Some((a.iter().map(|v| v / d).collect(), c / d)),
                    _ => None,
                }
            }
            Expr::Call(..) => None,
        }
    }

    pub fn variables(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        self.walk_vars(&mut |v| {
            if seen.insert(v.to_string()) {
                out.push(v.to_string());
            }
        });
        out
    }

    fn walk_vars(&self, f: &mut dyn FnMut(&str)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(v),
            Expr::Neg(e) => e.walk_vars(f),
            Expr::Bin(_, l, r) => {
                l.walk_vars(f);
                r.walk_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk_vars(f)),
        }
    }

    /// Replaces every variable by the expression `sub` returns for it.
    pub fn substitute(&self, sub: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => sub(v).unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(sub))),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.substitute(sub), r.substitute(sub)),
            Expr::Call(func, args) => {
                Expr::Call(*func, args.iter().map(|a| a.substitute(sub)).collect())
            }
        }
    }

    /// Resolves variable names to positions in `vars`.
    pub fn bind(&self, vars: &[String]) -> Result<CompiledExpr> {
        Ok(CompiledExpr {
            root: Node::build(self, vars)?,
        })
    }

    pub fn eval(&self, env: &Env) -> Result<f64> {
        Ok(self.evaluate(env)?.value)
    }

    /// Evaluation with the domain-error flag (e.g. `log` of a non-positive
    /// number) reported next to the propagated NaN.
    pub fn evaluate(&self, env: &Env) -> Result<Evaluation> {
        let compiled = self.bind(env.names())?;
        let value = compiled.eval(env.values());
        Ok(Evaluation {
            value,
            domain_error: value.is_nan(),
        })
    }

    pub fn deriv(&self, env: &Env, var: &str) -> Result<f64> {
        let idx = env
            .position(var)
            .ok_or_else(|| Error::UnboundVariable(var.to_string()))?;
        let compiled = self.bind(env.names())?;
        Ok(compiled.eval_dual(env.values(), idx).d)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub domain_error: bool,
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "-{:?}", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                write_child(f, e, 3)
            }
            Expr::Bin(op, l, r) => {
                let (sym, lp, rp) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => (" * ", 2, 3),
                    BinOp::Div => (" / ", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                write_child(f, l, lp)?;
                write!(f, "{sym}")?;
                write_child(f, r, rp)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        parse(s)
    }
}

/// Ordered variable bindings with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Env {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Env {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Env> {
        let mut env = Env::default();
        for (name, value) in pairs {
            let name = name.into();
            if env.names.contains(&name) {
                return Err(Error::structural(format!("duplicate variable `{name}`")));
            }
            env.names.push(name);
            env.values.push(value);
        }
        Ok(env)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call1(Func, Box<Node>),
    Call2(Func, Box<Node>, Box<Node>),
}

impl Node {
    fn build(e: &Expr, vars: &[String]) -> Result<Node> {
        Ok(match e {
            Expr::Num(v) => Node::Num(*v),
            Expr::Var(v) => Node::Var(
                vars.iter()
                    .position(|n| n == v)
                    .ok_or_else(|| Error::UnboundVariable(v.clone()))?,
            ),
            Expr::Neg(e) => Node::Neg(Box::new(Node::build(e, vars)?)),
            Expr::Bin(op, l, r) => Node::Bin(
                *op,
                Box::new(Node::build(l, vars)?),
                Box::new(Node::build(r, vars)?),
            ),
            Expr::Call(func, args) => match args.as_slice() {
                [a] => Node::Call1(*func, Box::new(Node::build(a, vars)?)),
                [a, b] => Node::Call2(
                    *func,
                    Box::new(Node::build(a, vars)?),
                    Box::new(Node::build(b, vars)?),
                ),
                _ => {
                    return Err(Error::structural(format!(
                        "`{}` called with {} arguments",
                        func.name(),
                        args.len()
                    )))
                }
            },
        })
    }

    fn eval<T: dual::Scalar>(&self, x: &[T]) -> T {
        match self {
            Node::Num(v) => T::constant(*v),
            Node::Var(i) => x[*i],
            Node::Neg(e) => -e.eval(x),
            Node::Bin(op, l, r) => {
                let (a, b) = (l.eval(x), r.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
            Node::Call1(func, a) => {
                let a = a.eval(x);
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Min | Func::Max => unreachable!("binary function bound as unary"),
                }
            }
            Node::Call2(func, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match func {
                    Func::Min => {
                        if a.value() <= b.value() {
                            a
                        } else {
                            b
                        }
                    }
                    Func::Max => {
                        if a.value() >= b.value() {
                            a
                        } else {
                            b
                        }
                    }
                    _ => unreachable!("unary function bound as binary"),
                }
            }
        }
    }

    fn kink_margin(&self, x: &[f64]) -> f64 {
        match self {
            Node::Num(_) | Node::Var(_) => f64::INFINITY,
            Node::Neg(e) => e.kink_margin(x),
            Node::Bin(_, l, r) => l.kink_margin(x).min(r.kink_margin(x)),
            Node::Call1(func, a) => {
                let inner = a.kink_margin(x);
                if *func == Func::Abs {
                    inner.min(a.eval(x).abs())
                } else {
                    inner
                }
            }
            Node::Call2(_, a, b) => {
                let gap = (a.eval(x) - b.eval(x)).abs();
                a.kink_margin(x).min(b.kink_margin(x)).min(gap)
            }
        }
    }
}

/// An expression bound to positional variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    /// Forward-mode evaluation seeded in direction `var`.
    pub fn eval_dual(&self, x: &[f64], var: usize) -> Dual {
        let seeded: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == var { 1.0 } else { 0.0 }))
            .collect();
        self.root.eval(&seeded)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|i| self.eval_dual(x, i).d).collect()
    }

    /// Distance to the nearest kink of `abs`/`min`/`max` at `x`
    /// (`inf` when the expression has none).
    pub fn kink_margin(&self, x: &[f64]) -> f64 {
        self.root.kink_margin(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn parses_subtraction() {
        assert_eq!(
            p("u - x"),
            Expr::bin(BinOp::Sub, Expr::var("u"), Expr::var("x"))
        );
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        assert_eq!(
            p("-x^2"),
            Expr::Neg(Box::new(Expr::bin(BinOp::Pow, Expr::var("x"), Expr::num(2.0))))
        );
    }

    #[test]
    fn nested_calls() {
        assert_eq!(
            p("min(1, exp(x))"),
            Expr::Call(
                Func::Min,
                vec![Expr::num(1.0), Expr::Call(Func::Exp, vec![Expr::var("x")])]
            )
        );
    }

    #[test]
    fn associativity() {
        assert_eq!(p("a - b - c"), p("(a - b) - c"));
        assert_eq!(p("a / b * c"), p("(a / b) * c"));
        assert_eq!(p("a ^ b ^ c"), p("a ^ (b ^ c)"));
        assert_eq!(p("2^-x"), p("2^(-x)"));
    }

    #[test]
    fn numbers() {
        assert_eq!(p("1e-7"), Expr::num(1e-7));
        assert_eq!(p(".5"), Expr::num(0.5));
        assert_eq!(p("2.5E+3"), Expr::num(2500.0));
    }

    #[test]
    fn eval_examples() {
        let env = Env::new([("u", 2.0), ("x", 0.5)]).unwrap();
        assert_eq!(p("u - x").eval(&env).unwrap(), 1.5);
        let env = Env::new([("x", 2.0)]).unwrap();
        assert_eq!(p("x^3").eval(&env).unwrap(), 8.0);
        assert_eq!(p("abs(-3)+max(1,2)").eval(&Env::default()).unwrap(), 5.0);
    }

    #[test]
    fn deriv_examples() {
        let env = Env::new([("x", 3.0)]).unwrap();
        assert_eq!(p("x^2").deriv(&env, "x").unwrap(), 6.0);
        let env = Env::new([("u", 7.0), ("x", -1.0)]).unwrap();
        assert_eq!(p("u - x").deriv(&env, "u").unwrap(), 1.0);
        let env = Env::new([("x", 0.0)]).unwrap();
        assert_eq!(p("sin(x)").deriv(&env, "x").unwrap(), 1.0);
    }

    #[test]
    fn kink_convention_uses_left_branch() {
        let env = Env::new([("x", 0.0), ("y", 0.0)]).unwrap();
        assert_eq!(p("abs(x)").deriv(&env, "x").unwrap(), -1.0);
        assert_eq!(p("min(x, y)").deriv(&env, "x").unwrap(), 1.0);
        assert_eq!(p("max(x, y)").deriv(&env, "y").unwrap(), 0.0);
    }

    #[test]
    fn unbound_variable() {
        let env = Env::new([("x", 1.0)]).unwrap();
        assert_eq!(
            p("x + y").eval(&env),
            Err(Error::UnboundVariable("y".into()))
        );
    }

    #[test]
    fn domain_error_is_flagged() {
        let env = Env::new([("x", -1.0)]).unwrap();
        let r = p("log(x)").evaluate(&env).unwrap();
        assert!(r.value.is_nan() && r.domain_error);
        let r = p("log(-x)").evaluate(&env).unwrap();
        assert!(!r.domain_error);
    }

    #[test]
    fn syntax_errors_carry_offset_and_expected_set() {
        let e = parse("x + * y").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(e.expected.contains(&"identifier".to_string()));
        let e = parse("(x + 1").unwrap_err();
        assert_eq!(e.offset, 6);
        let e = parse("foo(x)").unwrap_err();
        assert_eq!(e.offset, 0);
        let e = parse("min(x)").unwrap_err();
        assert!(e.expected[0].contains("2 argument"));
        let e = parse("x $ y").unwrap_err();
        assert_eq!(e.offset, 2);
        let e = parse("x y").unwrap_err();
        assert_eq!(e.offset, 2);
    }

    #[test]
    fn printer_round_trips_tricky_shapes() {
        for src in [
            "-x^2",
            "(-x)^2",
            "a - (b - c)",
            "a / (b * c)",
            "(a ^ b) ^ c",
            "--x",
            "2^-x",
            "min(1, exp(x)) * -y",
            "x * (y + 1e-7)",
        ] {
            let e = p(src);
            assert_eq!(p(&e.to_string()), e, "{src} printed as {e}");
        }
    }

    #[test]
    fn affine_detection() {
        let vars = vec!["x".to_string(), "y".to_string()];
        let e: Expr = "2*(x - 3) + y/4 - sin(0)".parse().unwrap();
        assert_eq!(e.affine_in(&vars), Some((vec![2.0, 0.25], -6.0)));
        for bad in ["x*y", "sin(x)", "x^1", "1/x", "z"] {
            let e: Expr = bad.parse().unwrap();
            assert_eq!(e.affine_in(&vars), None, "{bad}");
        }
    }

    #[test]
    fn substitution() {
        let e = p("x * y").substitute(&|v| (v == "x").then(|| p("a + 1")));
        assert_eq!(e, p("(a + 1) * y"));
        assert_eq!(e.variables(), vec!["a".to_string(), "y".to_string()]);
    }
}
