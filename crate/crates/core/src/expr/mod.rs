//! Expression trees for scalar functions of `(t, q1..qn, dq1..dqn)`.
//!
//! This is the language scenario files declare force laws and coefficient
//! fields in. Trees are immutable and cheaply shared; differentiation is
//! exact and applies only the light simplifications `0*x -> 0`, `x+0 -> x`,
//! `1*x -> x` plus constant folding.

mod parser;

pub use parser::{parse, SymbolTable};

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use core::fmt;

use crate::error::{EvalError, EvalErrorKind};

/// A variable of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// `t`
    Time,
    /// `q<i>`, 1-based spatial index
    Coord(usize),
    /// `dq<i>`, 1-based spatial index
    Velocity(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Time => write!(f, "t"),
            Var::Coord(i) => write!(f, "q{i}"),
            Var::Velocity(i) => write!(f, "dq{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// An immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn time() -> Expr {
        Expr::Var(Var::Time)
    }

    pub fn coord(i: usize) -> Expr {
        Expr::Var(Var::Coord(i))
    }

    pub fn velocity(i: usize) -> Expr {
        Expr::Var(Var::Velocity(i))
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        if let Some(y) = b.as_const() {
            if y == 1.0 {
                return a;
            }
            if y == 0.0 {
                return Expr::Const(1.0);
            }
        }
        Expr::Binary(BinaryOp::Pow, Arc::new(a), Arc::new(b))
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if op == UnaryOp::Neg {
            return -a;
        }
        Expr::Unary(op, Arc::new(a))
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Evaluate against position slots `pos` (`pos[0] = t`) and velocity
    /// slots `vel` (`vel[i]` for `dq<i>`, `vel[0]` is the temporal velocity).
    pub fn eval(&self, pos: &[f64], vel: &[f64]) -> Result<f64, EvalError> {
        let err = |kind| Err(EvalError::new(kind, pos, vel));
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::Time) => match pos.first() {
                Some(t) => *t,
                None => return err(EvalErrorKind::UnboundVariable("t".to_string())),
            },
            Expr::Var(Var::Coord(i)) => match pos.get(*i) {
                Some(q) => *q,
                None => return err(EvalErrorKind::UnboundVariable(format!("q{i}"))),
            },
            Expr::Var(Var::Velocity(i)) => match vel.get(*i) {
                Some(dq) => *dq,
                None => return err(EvalErrorKind::UnboundVariable(format!("dq{i}"))),
            },
            Expr::Unary(op, a) => {
                let x = a.eval(pos, vel)?;
                match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Sin => libm::sin(x),
                    UnaryOp::Cos => libm::cos(x),
                    UnaryOp::Exp => libm::exp(x),
                    UnaryOp::Log => {
                        if x <= 0.0 {
                            return err(EvalErrorKind::LogDomain);
                        }
                        libm::log(x)
                    }
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            return err(EvalErrorKind::SqrtDomain);
                        }
                        libm::sqrt(x)
                    }
                    UnaryOp::Abs => x.abs(),
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(pos, vel)?;
                let y = b.eval(pos, vel)?;
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => {
                        if y == 0.0 {
                            return err(EvalErrorKind::DivisionByZero);
                        }
                        x / y
                    }
                    BinaryOp::Pow => {
                        let r = libm::pow(x, y);
                        if r.is_nan() && !x.is_nan() && !y.is_nan() {
                            return err(EvalErrorKind::PowDomain);
                        }
                        r
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            err(EvalErrorKind::NonFinite)
        }
    }

    /// Exact symbolic partial derivative with respect to `var`.
    pub fn differentiate(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => {
                if *v == var {
                    Expr::Const(1.0)
                } else {
                    Expr::Const(0.0)
                }
            }
            Expr::Unary(op, a) => {
                let da = a.differentiate(var);
                if da.is_zero() && *op != UnaryOp::Neg {
                    return Expr::Const(0.0);
                }
                let inner = a.as_ref().clone();
                match op {
                    UnaryOp::Neg => Expr::neg(da),
                    UnaryOp::Sin => Expr::mul(Expr::unary(UnaryOp::Cos, inner), da),
                    UnaryOp::Cos => Expr::neg(Expr::mul(Expr::unary(UnaryOp::Sin, inner), da)),
                    UnaryOp::Exp => Expr::mul(Expr::unary(UnaryOp::Exp, inner), da),
                    UnaryOp::Log => Expr::div(da, inner),
                    UnaryOp::Sqrt => Expr::div(
                        da,
                        Expr::mul(Expr::Const(2.0), Expr::unary(UnaryOp::Sqrt, inner)),
                    ),
                    // d|u| = u/|u| * du, undefined at u = 0 (raises a division
                    // error there rather than guessing a sign)
                    UnaryOp::Abs => Expr::mul(
                        Expr::div(inner.clone(), Expr::unary(UnaryOp::Abs, inner)),
                        da,
                    ),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                let (ae, be) = (a.as_ref().clone(), b.as_ref().clone());
                match op {
                    BinaryOp::Add => Expr::add(da, db),
                    BinaryOp::Sub => Expr::sub(da, db),
                    BinaryOp::Mul => {
                        Expr::add(Expr::mul(da, be), Expr::mul(ae, db))
                    }
                    BinaryOp::Div => Expr::div(
                        Expr::sub(Expr::mul(da, be.clone()), Expr::mul(ae, db)),
                        Expr::pow(be, Expr::Const(2.0)),
                    ),
                    BinaryOp::Pow => {
                        if let Some(c) = be.as_const() {
                            // d(u^c) = c u^(c-1) u'
                            return Expr::mul(
                                Expr::mul(
                                    Expr::Const(c),
                                    Expr::pow(ae, Expr::Const(c - 1.0)),
                                ),
                                da,
                            );
                        }
                        // d(u^v) = u^v (v' log u + v u'/u)
                        let term1 = Expr::mul(db, Expr::unary(UnaryOp::Log, ae.clone()));
                        let term2 = Expr::div(Expr::mul(be.clone(), da), ae.clone());
                        Expr::mul(Expr::pow(ae, be), Expr::add(term1, term2))
                    }
                }
            }
        }
    }

    /// Replace every coordinate `q<i>` by `subs[i]`; time and velocities are
    /// left untouched. Used to express a composed map `f(t, g(t, q))` in
    /// closed form.
    pub fn substitute_coords(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(Var::Coord(i)) => subs
                .get(*i)
                .cloned()
                .unwrap_or_else(|| self.clone()),
            Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute_coords(subs)),
            Expr::Binary(op, a, b) => {
                let sa = a.substitute_coords(subs);
                let sb = b.substitute_coords(subs);
                match op {
                    BinaryOp::Add => Expr::add(sa, sb),
                    BinaryOp::Sub => Expr::sub(sa, sb),
                    BinaryOp::Mul => Expr::mul(sa, sb),
                    BinaryOp::Div => Expr::div(sa, sb),
                    BinaryOp::Pow => Expr::pow(sa, sb),
                }
            }
        }
    }

    pub fn uses_time(&self) -> bool {
        self.uses(|v| matches!(v, Var::Time))
    }

    pub fn uses_coords(&self) -> bool {
        self.uses(|v| matches!(v, Var::Coord(_)))
    }

    pub fn uses_velocities(&self) -> bool {
        self.uses(|v| matches!(v, Var::Velocity(_)))
    }

    fn uses(&self, pred: impl Fn(&Var) -> bool + Copy) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => pred(v),
            Expr::Unary(_, a) => a.uses(pred),
            Expr::Binary(_, a, b) => a.uses(pred) || b.uses(pred),
        }
    }

    /// Largest spatial index mentioned by the tree (coordinates or
    /// velocities); 0 when none.
    pub fn max_index(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(Var::Time) => 0,
            Expr::Var(Var::Coord(i)) | Expr::Var(Var::Velocity(i)) => *i,
            Expr::Unary(_, a) => a.max_index(),
            Expr::Binary(_, a, b) => a.max_index().max(b.max_index()),
        }
    }
}

// Precedence levels used both by the parser and the printer.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 => PREC_NEG,
            Expr::Const(_) | Expr::Var(_) => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(_, _) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add, _, _) | Expr::Binary(BinaryOp::Sub, _, _) => PREC_ADD,
            Expr::Binary(BinaryOp::Mul, _, _) | Expr::Binary(BinaryOp::Div, _, _) => PREC_MUL,
            Expr::Binary(BinaryOp::Pow, _, _) => PREC_POW,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min_prec;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || c.is_sign_negative() {
                    write!(f, "-{}", -*c)?;
                } else {
                    write!(f, "{c}")?;
                }
            }
            Expr::Var(v) => write!(f, "{v}")?,
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                // bind tighter than + and * so "-a*b" round-trips as (-a)*b
                a.fmt_prec(f, PREC_NEG + 1)?;
            }
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Binary(op, a, b) => {
                let (sym, left_prec, right_prec) = match op {
                    BinaryOp::Add => ("+", PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Sub => ("-", PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Mul => ("*", PREC_MUL, PREC_MUL + 1),
                    BinaryOp::Div => ("/", PREC_MUL, PREC_MUL + 1),
                    // right-associative, unary minus allowed on the right
                    BinaryOp::Pow => ("^", PREC_POW + 1, PREC_NEG),
                };
                a.fmt_prec(f, left_prec)?;
                write!(f, "{sym}")?;
                b.fmt_prec(f, right_prec)?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
