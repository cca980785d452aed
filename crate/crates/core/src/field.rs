//! Scalar fields of `(t, q^i, dq^i)` backed by expression trees or host
//! closures, plus the numerical differentiation used throughout the geometry
//! modules.
//!
//! Fields evaluate against two slices: positions `pos` (`pos[0] = t`) and
//! velocities `vel` (`vel[0]` = temporal velocity, 1 on jet evaluations).
//! Velocity-independent fields simply ignore `vel` and may be called with an
//! empty slice.
//!
//! `partial` returns the exact symbolic derivative whenever the field is
//! expression-backed and falls back to central differences otherwise; mixed
//! second derivatives of closure-backed fields use a dedicated four-point
//! stencil instead of differencing a difference.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{EvalError, EvalErrorKind, GeometryError};
use crate::expr::{Expr, Var};

/// Which argument slot a derivative acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// `d/dq^lambda` with `lambda = 0` meaning `d/dt`.
    Pos(usize),
    /// `d/d(dq^j)`.
    Vel(usize),
}

impl Slot {
    fn var(self) -> Var {
        match self {
            Slot::Pos(0) => Var::Time,
            Slot::Pos(i) => Var::Coord(i),
            Slot::Vel(i) => Var::Velocity(i),
        }
    }
}

/// Declared argument dependence of a closure-backed field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Dependencies {
    pub time: bool,
    pub coords: bool,
    pub velocities: bool,
}

impl Dependencies {
    pub const NONE: Dependencies = Dependencies {
        time: false,
        coords: false,
        velocities: false,
    };
    pub const BASE: Dependencies = Dependencies {
        time: true,
        coords: true,
        velocities: false,
    };
    pub const JET: Dependencies = Dependencies {
        time: true,
        coords: true,
        velocities: true,
    };

    fn union(self, other: Dependencies) -> Dependencies {
        Dependencies {
            time: self.time || other.time,
            coords: self.coords || other.coords,
            velocities: self.velocities || other.velocities,
        }
    }
}

type FieldFn = dyn Fn(&[f64], &[f64]) -> Result<f64, EvalError> + Send + Sync;

enum Repr {
    Const(f64),
    Tree(Expr),
    Func { f: Box<FieldFn>, deps: Dependencies },
    /// First central difference of `base` along `slot`.
    Fd1 { base: ScalarField, slot: Slot },
    /// Second difference of `base` along two slots (four-point stencil when
    /// the slots differ, three-point when equal).
    Fd2 { base: ScalarField, s1: Slot, s2: Slot },
}

/// A differentiable scalar map of `(t, q^i[, dq^i])`; immutable and cheap to
/// clone.
#[derive(Clone)]
pub struct ScalarField {
    repr: Arc<Repr>,
    dim: usize,
}

impl core::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match &*self.repr {
            Repr::Const(c) => write!(f, "ScalarField({c})"),
            Repr::Tree(e) => write!(f, "ScalarField({e})"),
            Repr::Func { .. } => write!(f, "ScalarField(<fn>)"),
            Repr::Fd1 { slot, .. } => write!(f, "ScalarField(fd {slot:?})"),
            Repr::Fd2 { s1, s2, .. } => write!(f, "ScalarField(fd2 {s1:?} {s2:?})"),
        }
    }
}

impl ScalarField {
    pub fn constant(dim: usize, value: f64) -> ScalarField {
        ScalarField {
            repr: Arc::new(Repr::Const(value)),
            dim,
        }
    }

    pub fn zero(dim: usize) -> ScalarField {
        ScalarField::constant(dim, 0.0)
    }

    pub fn from_expr(dim: usize, expr: Expr) -> ScalarField {
        ScalarField {
            repr: Arc::new(Repr::Tree(expr)),
            dim,
        }
    }

    pub fn function(
        dim: usize,
        deps: Dependencies,
        f: impl Fn(&[f64], &[f64]) -> Result<f64, EvalError> + Send + Sync + 'static,
    ) -> ScalarField {
        ScalarField {
            repr: Arc::new(Repr::Func { f: Box::new(f), deps }),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_expr(&self) -> Option<Expr> {
        match &*self.repr {
            Repr::Const(c) => Some(Expr::Const(*c)),
            Repr::Tree(e) => Some(e.clone()),
            _ => None,
        }
    }

    pub fn is_zero_const(&self) -> bool {
        matches!(&*self.repr, Repr::Const(c) if *c == 0.0)
    }

    pub fn dependencies(&self) -> Dependencies {
        match &*self.repr {
            Repr::Const(_) => Dependencies::NONE,
            Repr::Tree(e) => Dependencies {
                time: e.uses_time(),
                coords: e.uses_coords(),
                velocities: e.uses_velocities(),
            },
            Repr::Func { deps, .. } => *deps,
            Repr::Fd1 { base, .. } | Repr::Fd2 { base, .. } => base.dependencies(),
        }
    }

    pub fn depends_on_velocities(&self) -> bool {
        self.dependencies().velocities
    }

    pub fn depends_on_time(&self) -> bool {
        self.dependencies().time
    }

    pub fn eval(&self, pos: &[f64], vel: &[f64]) -> Result<f64, EvalError> {
        match &*self.repr {
            Repr::Const(c) => Ok(*c),
            Repr::Tree(e) => e.eval(pos, vel),
            Repr::Func { f, .. } => f(pos, vel),
            Repr::Fd1 { base, slot } => central_difference(base, pos, vel, *slot, None),
            Repr::Fd2 { base, s1, s2 } => second_difference(base, pos, vel, *s1, *s2),
        }
    }

    /// Evaluate a velocity-independent field at a position.
    pub fn eval_base(&self, pos: &[f64]) -> Result<f64, EvalError> {
        self.eval(pos, &[])
    }

    /// Partial derivative along a slot: symbolic for expression-backed
    /// fields, finite differences otherwise.
    pub fn partial(&self, slot: Slot) -> ScalarField {
        match &*self.repr {
            Repr::Const(_) => ScalarField::zero(self.dim),
            Repr::Tree(e) => ScalarField::from_expr(self.dim, e.differentiate(slot.var())),
            Repr::Func { .. } => ScalarField {
                repr: Arc::new(Repr::Fd1 {
                    base: self.clone(),
                    slot,
                }),
                dim: self.dim,
            },
            Repr::Fd1 { base, slot: s1 } => ScalarField {
                repr: Arc::new(Repr::Fd2 {
                    base: base.clone(),
                    s1: *s1,
                    s2: slot,
                }),
                dim: self.dim,
            },
            Repr::Fd2 { .. } => ScalarField {
                repr: Arc::new(Repr::Fd1 {
                    base: self.clone(),
                    slot,
                }),
                dim: self.dim,
            },
        }
    }

    pub fn partial_pos(&self, lambda: usize) -> ScalarField {
        self.partial(Slot::Pos(lambda))
    }

    pub fn partial_vel(&self, j: usize) -> ScalarField {
        self.partial(Slot::Vel(j))
    }

    // --- combinators (stay symbolic when both operands are) -------------

    pub fn scaled(&self, c: f64) -> ScalarField {
        if c == 0.0 {
            return ScalarField::zero(self.dim);
        }
        if c == 1.0 {
            return self.clone();
        }
        if let Some(e) = self.as_expr() {
            return ScalarField::from_expr(self.dim, Expr::mul(Expr::Const(c), e));
        }
        let base = self.clone();
        ScalarField::function(self.dim, self.dependencies(), move |p, v| {
            Ok(c * base.eval(p, v)?)
        })
    }

    pub fn plus(&self, other: &ScalarField) -> ScalarField {
        if self.is_zero_const() {
            return other.clone();
        }
        if other.is_zero_const() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_expr(), other.as_expr()) {
            return ScalarField::from_expr(self.dim.max(other.dim), Expr::add(a, b));
        }
        let (a, b) = (self.clone(), other.clone());
        let deps = self.dependencies().union(other.dependencies());
        ScalarField::function(self.dim.max(other.dim), deps, move |p, v| {
            Ok(a.eval(p, v)? + b.eval(p, v)?)
        })
    }

    pub fn minus(&self, other: &ScalarField) -> ScalarField {
        if other.is_zero_const() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_expr(), other.as_expr()) {
            return ScalarField::from_expr(self.dim.max(other.dim), Expr::sub(a, b));
        }
        let (a, b) = (self.clone(), other.clone());
        let deps = self.dependencies().union(other.dependencies());
        ScalarField::function(self.dim.max(other.dim), deps, move |p, v| {
            Ok(a.eval(p, v)? - b.eval(p, v)?)
        })
    }

    pub fn times(&self, other: &ScalarField) -> ScalarField {
        if self.is_zero_const() || other.is_zero_const() {
            return ScalarField::zero(self.dim.max(other.dim));
        }
        if let (Some(a), Some(b)) = (self.as_expr(), other.as_expr()) {
            return ScalarField::from_expr(self.dim.max(other.dim), Expr::mul(a, b));
        }
        let (a, b) = (self.clone(), other.clone());
        let deps = self.dependencies().union(other.dependencies());
        ScalarField::function(self.dim.max(other.dim), deps, move |p, v| {
            Ok(a.eval(p, v)? * b.eval(p, v)?)
        })
    }

    /// Multiply by the velocity variable `dq^j`.
    pub fn times_velocity(&self, j: usize) -> ScalarField {
        if self.is_zero_const() {
            return self.clone();
        }
        if let Some(e) = self.as_expr() {
            return ScalarField::from_expr(self.dim, Expr::mul(e, Expr::velocity(j)));
        }
        let base = self.clone();
        let mut deps = self.dependencies();
        deps.velocities = true;
        ScalarField::function(self.dim, deps, move |p, v| {
            let dq = v.get(j).copied().ok_or_else(|| {
                EvalError::new(
                    EvalErrorKind::UnboundVariable(alloc::format!("dq{j}")),
                    p,
                    v,
                )
            })?;
            Ok(base.eval(p, v)? * dq)
        })
    }
}

const FD_EPS: f64 = f64::EPSILON;

fn fd_step_first(x: f64) -> f64 {
    libm::cbrt(FD_EPS) * 1.0f64.max(x.abs())
}

fn fd_step_second(x: f64) -> f64 {
    libm::pow(FD_EPS, 0.25) * 1.0f64.max(x.abs())
}

fn slot_value(pos: &[f64], vel: &[f64], slot: Slot) -> f64 {
    match slot {
        Slot::Pos(i) => pos.get(i).copied().unwrap_or(0.0),
        Slot::Vel(i) => vel.get(i).copied().unwrap_or(0.0),
    }
}

fn bump(pos: &[f64], vel: &[f64], slot: Slot, delta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = pos.to_vec();
    let mut v = vel.to_vec();
    match slot {
        Slot::Pos(i) => {
            if i >= p.len() {
                p.resize(i + 1, 0.0);
            }
            p[i] += delta;
        }
        Slot::Vel(i) => {
            if i >= v.len() {
                v.resize(i + 1, 0.0);
            }
            v[i] += delta;
        }
    }
    (p, v)
}

fn central_difference(
    f: &ScalarField,
    pos: &[f64],
    vel: &[f64],
    slot: Slot,
    step: Option<f64>,
) -> Result<f64, EvalError> {
    let h = step.unwrap_or_else(|| fd_step_first(slot_value(pos, vel, slot)));
    let (pp, vp) = bump(pos, vel, slot, h);
    let (pm, vm) = bump(pos, vel, slot, -h);
    let hi = f.eval(&pp, &vp)?;
    let lo = f.eval(&pm, &vm)?;
    let d = (hi - lo) / (2.0 * h);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(EvalError::new(EvalErrorKind::NonFinite, pos, vel))
    }
}

fn second_difference(
    f: &ScalarField,
    pos: &[f64],
    vel: &[f64],
    s1: Slot,
    s2: Slot,
) -> Result<f64, EvalError> {
    let h1 = fd_step_second(slot_value(pos, vel, s1));
    if s1 == s2 {
        let (pp, vp) = bump(pos, vel, s1, h1);
        let (pm, vm) = bump(pos, vel, s1, -h1);
        let hi = f.eval(&pp, &vp)?;
        let lo = f.eval(&pm, &vm)?;
        let mid = f.eval(pos, vel)?;
        let d = (hi - 2.0 * mid + lo) / (h1 * h1);
        return if d.is_finite() {
            Ok(d)
        } else {
            Err(EvalError::new(EvalErrorKind::NonFinite, pos, vel))
        };
    }
    let h2 = fd_step_second(slot_value(pos, vel, s2));
    let mut acc = 0.0;
    for (sa, sb, sign) in [
        (h1, h2, 1.0),
        (h1, -h2, -1.0),
        (-h1, h2, -1.0),
        (-h1, -h2, 1.0),
    ] {
        let (p1, v1) = bump(pos, vel, s1, sa);
        let (p2, v2) = bump(&p1, &v1, s2, sb);
        acc += sign * f.eval(&p2, &v2)?;
    }
    let d = acc / (4.0 * h1 * h2);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(EvalError::new(EvalErrorKind::NonFinite, pos, vel))
    }
}

/// Central-difference estimate of a partial derivative at a point.
///
/// With `h = None` the step is `cbrt(machine epsilon) * max(1, |x|)` around
/// the differentiated slot's value.
pub fn fd_partial(
    f: &ScalarField,
    pos: &[f64],
    vel: &[f64],
    slot: Slot,
    h: Option<f64>,
) -> Result<f64, EvalError> {
    central_difference(f, pos, vel, slot, h)
}

/// A point of the velocity phase space: `pos[0] = t`, `vel[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

impl JetPoint {
    pub fn new(t: f64, q: &[f64], dq: &[f64]) -> JetPoint {
        let mut pos = Vec::with_capacity(q.len() + 1);
        pos.push(t);
        pos.extend_from_slice(q);
        let mut vel = Vec::with_capacity(dq.len() + 1);
        vel.push(1.0);
        vel.extend_from_slice(dq);
        JetPoint { pos, vel }
    }

    pub fn dim(&self) -> usize {
        self.pos.len() - 1
    }
}

/// A box in `(t, q, dq)` used to generate probe lattices.
#[derive(Debug, Clone)]
pub struct Region {
    pub time: (f64, f64),
    pub coords: Vec<(f64, f64)>,
    pub velocities: Vec<(f64, f64)>,
}

impl Region {
    /// `t, q^i, dq^i` all ranging over `[-1, 1]`.
    pub fn unit(n: usize) -> Region {
        Region {
            time: (-1.0, 1.0),
            coords: vec![(-1.0, 1.0); n],
            velocities: vec![(-1.0, 1.0); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Lattice of `per_axis^(2n+1)` jet points covering the box.
    pub fn jet_lattice(&self, per_axis: usize) -> Vec<JetPoint> {
        let n = self.dim();
        let axes: Vec<(f64, f64)> = core::iter::once(self.time)
            .chain(self.coords.iter().copied())
            .chain(self.velocities.iter().copied())
            .collect();
        let mut out = Vec::new();
        let total = per_axis.pow(axes.len() as u32);
        for mut code in 0..total {
            let mut vals = Vec::with_capacity(axes.len());
            for &(lo, hi) in &axes {
                let k = code % per_axis;
                code /= per_axis;
                let f = if per_axis == 1 {
                    0.5
                } else {
                    k as f64 / (per_axis - 1) as f64
                };
                vals.push(lo + f * (hi - lo));
            }
            out.push(JetPoint::new(vals[0], &vals[1..=n], &vals[n + 1..]));
        }
        out
    }

    /// Lattice of `per_axis^(n+1)` positions (time and coordinates only).
    pub fn position_lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<(f64, f64)> = core::iter::once(self.time)
            .chain(self.coords.iter().copied())
            .collect();
        let mut out = Vec::new();
        let total = per_axis.pow(axes.len() as u32);
        for mut code in 0..total {
            let mut vals = Vec::with_capacity(axes.len());
            for &(lo, hi) in &axes {
                let k = code % per_axis;
                code /= per_axis;
                let f = if per_axis == 1 {
                    0.5
                } else {
                    k as f64 / (per_axis - 1) as f64
                };
                vals.push(lo + f * (hi - lo));
            }
            out.push(vals);
        }
        out
    }
}

/// Reject fields that secretly depend on velocities.
pub(crate) fn require_velocity_independent(
    fields: &[ScalarField],
) -> Result<(), GeometryError> {
    if fields.iter().any(|f| f.depends_on_velocities()) {
        Err(GeometryError::VelocityDependent)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolTable};

    fn expr_field(text: &str, n: usize) -> ScalarField {
        ScalarField::from_expr(n, parse(text, n, &SymbolTable::new()).unwrap())
    }

    #[test]
    fn fd_of_linear_field_is_exact() {
        let f = expr_field("q1", 1);
        let d = fd_partial(&f, &[0.0, 5.0], &[1.0], Slot::Pos(1), None).unwrap();
        assert!((d - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fd_of_square_matches_analytic_derivative() {
        let f = expr_field("q1^2", 1);
        let d = fd_partial(&f, &[0.0, 3.0], &[1.0], Slot::Pos(1), None).unwrap();
        assert!((d - 6.0).abs() < 1e-7);
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let f = ScalarField::constant(2, 7.5);
        for slot in [Slot::Pos(0), Slot::Pos(1), Slot::Vel(2)] {
            let d = fd_partial(&f, &[0.3, 1.0, -2.0], &[1.0, 0.1, 0.2], slot, None).unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn fd_converges_at_second_order() {
        // log-log slope of the error against an analytic derivative
        let f = expr_field("sin(q1)", 1);
        let x = 0.8f64;
        let exact = libm::cos(x);
        let steps = [1e-2, 1e-3, 1e-4];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&h| {
                let d = fd_partial(&f, &[0.0, x], &[1.0], Slot::Pos(1), Some(h)).unwrap();
                (d - exact).abs()
            })
            .collect();
        let slope = (libm::log(errs[0]) - libm::log(errs[2]))
            / (libm::log(steps[0]) - libm::log(steps[2]));
        assert!(
            (slope - 2.0).abs() < 0.1,
            "observed order {slope}, errors {errs:?}"
        );
    }

    #[test]
    fn symbolic_partial_of_expression_field() {
        let f = expr_field("q1^2*dq2", 2);
        let d = f.partial(Slot::Vel(2));
        let v = d.eval(&[0.0, 3.0, 0.0], &[1.0, 0.0, 5.0]).unwrap();
        assert_eq!(v, 9.0);
    }

    #[test]
    fn closure_fields_differentiate_by_stencil() {
        let f = ScalarField::function(1, Dependencies::BASE, |p, _| Ok(p[1] * p[1] * p[0]));
        // d/dq1 = 2 q1 t
        let d1 = f.partial(Slot::Pos(1));
        let v = d1.eval(&[2.0, 3.0], &[]).unwrap();
        assert!((v - 12.0).abs() < 1e-6);
        // d2/(dt dq1) = 2 q1
        let d2 = d1.partial(Slot::Pos(0));
        let v = d2.eval(&[2.0, 3.0], &[]).unwrap();
        assert!((v - 6.0).abs() < 1e-6, "mixed stencil value {v}");
        // d2/dq1^2 = 2 t
        let d2 = f.partial(Slot::Pos(1)).partial(Slot::Pos(1));
        let v = d2.eval(&[2.0, 3.0], &[]).unwrap();
        assert!((v - 4.0).abs() < 1e-5, "pure stencil value {v}");
    }

    #[test]
    fn combinators_preserve_expressions() {
        let a = expr_field("q1", 1);
        let b = expr_field("t", 1);
        let c = a.times(&b).plus(&a.scaled(2.0)).times_velocity(1);
        assert!(c.as_expr().is_some(), "combinators should stay symbolic");
        let v = c.eval(&[2.0, 3.0], &[1.0, 4.0]).unwrap();
        // (q1*t + 2*q1)*dq1 = (6 + 6)*4
        assert_eq!(v, 48.0);
    }

    #[test]
    fn dependency_metadata() {
        let f = expr_field("q1 + dq1", 1);
        assert!(f.depends_on_velocities());
        assert!(!f.depends_on_time());
        assert!(require_velocity_independent(core::slice::from_ref(&f)).is_err());
        let g = expr_field("q1 + t", 1);
        assert!(require_velocity_independent(core::slice::from_ref(&g)).is_ok());
    }

    #[test]
    fn jet_lattice_counts() {
        let region = Region::unit(1);
        assert_eq!(region.jet_lattice(5).len(), 125); // 5^(2*1+1)
        assert_eq!(region.position_lattice(5).len(), 25); // 5^(1+1)
        let region = Region::unit(2);
        assert_eq!(region.jet_lattice(3).len(), 243); // 3^5
    }
}
