//! Geodesic and Jacobi-field integration, conjugate-point detection, the
//! index form and the sectional curvature scalar.
//!
//! Time is a parameter, never a state variable: trajectories hold
//! `q^0 = t` and `dq^0 = 1` exactly, which keeps the temporal half of the
//! constrained geodesic equation identically satisfied.
//!
//! The linearised flow is integrated in first-order form with
//!
//! ```text
//! w^a  = u'^a - K_mu^a_b v^mu u^b          (covariant rate of u)
//! u'^a = w^a + K_mu^a_b v^mu u^b
//! w'^a = R_lm^a_b u^l v^m v^b + K_mu^a_b v^mu w^b
//! ```
//!
//! which is exactly the variational equation of the geodesic flow for
//! symmetric linear connections. Temporal components of `u` and `w` stay
//! zero and are stored as exact zeros.

use alloc::vec;
use alloc::vec::Vec;

use crate::connection::{curvature, Curvature, LinearConnection, TangentConnection};
use crate::dynamics::DynamicEquation;
use crate::error::{EvalError, GeometryError};
use crate::newtonian::TangentMetric;
use crate::ode::{integrate, FnRhs, IntegratorConfig, OdeSolution};
use crate::tensor::{ChartPoint, TangentVector, Tensor};

/// What drives a geodesic integration.
#[derive(Clone)]
pub enum GeodesicSource<'a> {
    Connection(&'a TangentConnection),
    Equation(&'a DynamicEquation),
}

/// Dense-output solution of the constrained geodesic equation.
pub struct GeodesicTrajectory {
    n: usize,
    span: (f64, f64),
    sol: OdeSolution,
    source_id: Option<u64>,
}

impl GeodesicTrajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    pub fn stats(&self) -> crate::ode::IntegrationStats {
        self.sol.stats
    }

    /// Position and velocity at `t`; `pos[0] = t` and `vel[0] = 1` exactly.
    pub fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let y = self.sol.eval(t);
        let mut pos = Vec::with_capacity(self.n + 1);
        pos.push(t);
        pos.extend_from_slice(&y[..self.n]);
        let mut vel = Vec::with_capacity(self.n + 1);
        vel.push(1.0);
        vel.extend_from_slice(&y[self.n..]);
        (pos, vel)
    }

    pub fn end_state(&self) -> (Vec<f64>, Vec<f64>) {
        self.sample(self.span.1)
    }

    pub(crate) fn source_id(&self) -> Option<u64> {
        self.source_id
    }
}

/// Integrate the constrained geodesic equation from spatial initial data
/// `(q0, dq0)` at `t = span.0`.
pub fn integrate_geodesic(
    source: GeodesicSource<'_>,
    q0: &[f64],
    dq0: &[f64],
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<GeodesicTrajectory, GeometryError> {
    let n = match &source {
        GeodesicSource::Connection(k) => k.dim(),
        GeodesicSource::Equation(e) => e.dim(),
    };
    if q0.len() != n || dq0.len() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: q0.len().min(dq0.len()),
            context: "geodesic initial data",
        });
    }
    if q0.iter().chain(dq0.iter()).any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFiniteInput);
    }
    let source_id = match &source {
        GeodesicSource::Connection(k) => Some(k.id()),
        GeodesicSource::Equation(_) => None,
    };

    let rhs = FnRhs::new(2 * n, {
        let source = source.clone();
        move |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), EvalError> {
            let mut pos = Vec::with_capacity(n + 1);
            pos.push(t);
            pos.extend_from_slice(&y[..n]);
            let mut vel = Vec::with_capacity(n + 1);
            vel.push(1.0);
            vel.extend_from_slice(&y[n..]);
            let acc = match &source {
                GeodesicSource::Connection(k) => k.acceleration(&pos, &vel)?,
                GeodesicSource::Equation(e) => e.acceleration(&pos, &vel)?,
            };
            dy[..n].copy_from_slice(&y[n..]);
            dy[n..].copy_from_slice(&acc[1..]);
            Ok(())
        }
    });

    let mut y0 = Vec::with_capacity(2 * n);
    y0.extend_from_slice(q0);
    y0.extend_from_slice(dq0);
    let sol = integrate(&rhs, span, &y0, cfg).map_err(GeometryError::Ode)?;
    Ok(GeodesicTrajectory {
        n,
        span,
        sol,
        source_id,
    })
}

/// Dense-output solution of the linearised flow along a geodesic.
pub struct JacobiTrajectory {
    n: usize,
    span: (f64, f64),
    sol: OdeSolution,
}

impl JacobiTrajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    /// Deviation field and covariant rate at `t`; slot 0 of either is an
    /// exact zero.
    pub fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let y = self.sol.eval(t);
        let mut u = Vec::with_capacity(self.n + 1);
        u.push(0.0);
        u.extend_from_slice(&y[..self.n]);
        let mut w = Vec::with_capacity(self.n + 1);
        w.push(0.0);
        w.extend_from_slice(&y[self.n..]);
        (u, w)
    }
}

/// Matrices of the linearised flow at a trajectory point: `a[i][j]` the
/// velocity coupling `K_mu^i_j v^mu` and `r[i][j]` the curvature drive
/// `R_{j mu}^i_b v^mu v^b` (spatial blocks, `0..n-1`).
fn variational_matrices(
    n: usize,
    k_at: &Tensor,
    r_at: &Tensor,
    vel: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    for i in 1..=n {
        for j in 1..=n {
            let mut acc = 0.0;
            for mu in 0..=n {
                acc += k_at.get(&[mu, i, j]) * vel[mu];
            }
            a[(i - 1) * n + (j - 1)] = acc;
            let mut rr = 0.0;
            for mu in 0..=n {
                let vm = vel[mu];
                if vm == 0.0 {
                    continue;
                }
                for b in 0..=n {
                    let vb = vel[b];
                    if vb == 0.0 {
                        continue;
                    }
                    rr += r_at.get(&[j, mu, i, b]) * vm * vb;
                }
            }
            r[(i - 1) * n + (j - 1)] = rr;
        }
    }
    (a, r)
}

/// Integrate the linearised flow along `geo` from spatial initial data
/// `(u0, w0)`. The trajectory must come from the same connection.
pub fn integrate_jacobi(
    k: &LinearConnection,
    geo: &GeodesicTrajectory,
    u0: &[f64],
    w0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<JacobiTrajectory, GeometryError> {
    let n = k.dim();
    if geo.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: geo.dim(),
            context: "geodesic dimension",
        });
    }
    if geo.source_id() != Some(k.id()) {
        return Err(GeometryError::SourceMismatch);
    }
    if u0.len() != n || w0.len() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: u0.len().min(w0.len()),
            context: "linearised initial data",
        });
    }

    let curv = curvature(k);
    let kc = k.clone();
    let rhs = FnRhs::new(
        2 * n,
        move |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), EvalError> {
            let (pos, vel) = geo.sample(t);
            jacobi_rhs(&kc, &curv, n, &pos, &vel, y, dy)
        },
    );

    let mut y0 = Vec::with_capacity(2 * n);
    y0.extend_from_slice(u0);
    y0.extend_from_slice(w0);
    let sol = integrate(&rhs, geo.span(), &y0, cfg).map_err(GeometryError::Ode)?;
    Ok(JacobiTrajectory {
        n,
        span: geo.span(),
        sol,
    })
}

fn jacobi_rhs(
    k: &LinearConnection,
    curv: &Curvature,
    n: usize,
    pos: &[f64],
    vel: &[f64],
    y: &[f64],
    dy: &mut [f64],
) -> Result<(), EvalError> {
    let k_at = k.components_at(pos)?;
    let r_at = curv.at(pos)?;
    let (a, r) = variational_matrices(n, &k_at, &r_at, vel);
    let (u, w) = y.split_at(n);
    for i in 0..n {
        let mut du = w[i];
        let mut dw = 0.0;
        for j in 0..n {
            du += a[i * n + j] * u[j];
            dw += r[i * n + j] * u[j] + a[i * n + j] * w[j];
        }
        dy[i] = du;
        dy[n + i] = dw;
    }
    Ok(())
}

/// A zero of the deviation determinant along a geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePoint {
    pub t: f64,
    /// Set when the determinant only touches zero (even-order tangency)
    /// instead of crossing it.
    pub degenerate: bool,
}

/// Times conjugate to `span.0` along the geodesic from `(q0, dq0)`: the
/// deviation matrix is integrated with `U(a) = 0`, `W(a) = I`, and zeros of
/// `det U` are located by sign-change bisection on the dense output (plus a
/// tangency scan for zeros without sign change).
pub fn find_conjugate_points(
    k: &LinearConnection,
    q0: &[f64],
    dq0: &[f64],
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Vec<ConjugatePoint>, GeometryError> {
    let n = k.dim();
    if q0.len() != n || dq0.len() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: q0.len().min(dq0.len()),
            context: "geodesic initial data",
        });
    }
    let curv = curvature(k);

    // combined state: q (n), dq (n), U (n*n, row-major), W (n*n)
    let dim = 2 * n + 2 * n * n;
    let k_shared = k.clone();
    let rhs = FnRhs::new(dim, move |t: f64, y: &[f64], dy: &mut [f64]| {
        let mut pos = Vec::with_capacity(n + 1);
        pos.push(t);
        pos.extend_from_slice(&y[..n]);
        let mut vel = Vec::with_capacity(n + 1);
        vel.push(1.0);
        vel.extend_from_slice(&y[n..2 * n]);

        let acc = k_shared.acceleration(&pos, &vel)?;
        dy[..n].copy_from_slice(&y[n..2 * n]);
        dy[n..2 * n].copy_from_slice(&acc[1..]);

        let k_at = k_shared.components_at(&pos)?;
        let r_at = curv.at(&pos)?;
        let (a, r) = variational_matrices(n, &k_at, &r_at, &vel);
        let u = &y[2 * n..2 * n + n * n];
        let w = &y[2 * n + n * n..];
        for i in 0..n {
            for c in 0..n {
                let mut du = w[i * n + c];
                let mut dw = 0.0;
                for j in 0..n {
                    du += a[i * n + j] * u[j * n + c];
                    dw += r[i * n + j] * u[j * n + c] + a[i * n + j] * w[j * n + c];
                }
                dy[2 * n + i * n + c] = du;
                dy[2 * n + n * n + i * n + c] = dw;
            }
        }
        Ok(())
    });

    let mut y0 = vec![0.0; dim];
    y0[..n].copy_from_slice(q0);
    y0[n..2 * n].copy_from_slice(dq0);
    for i in 0..n {
        y0[2 * n + n * n + i * n + i] = 1.0;
    }
    let sol = integrate(&rhs, span, &y0, cfg).map_err(GeometryError::Ode)?;

    let det_at = |t: f64| -> f64 {
        let y = sol.eval(t);
        let mut u = y[2 * n..2 * n + n * n].to_vec();
        crate::linalg::det_in_place(&mut u, n)
    };

    // scan; skip a ramp at the start where det ~ (t-a)^n vanishes trivially
    let samples = 2001usize;
    let (a, b) = span;
    let width = b - a;
    let scan_start = a + 1e-4 * width;
    let mut points: Vec<ConjugatePoint> = Vec::new();
    let mut prev_t = scan_start;
    let mut prev_d = det_at(prev_t);
    let mut mins: Vec<(f64, f64, f64)> = Vec::new(); // local |det| minima: (t-, t+, t at min)
    let mut window: Vec<(f64, f64)> = vec![(prev_t, prev_d)];
    for s in 1..samples {
        let t = scan_start + (b - scan_start) * s as f64 / (samples - 1) as f64;
        let d = det_at(t);
        if d == 0.0 || (d.signum() != prev_d.signum()) {
            // bracketed sign change: bisect
            let (mut lo, mut hi) = (prev_t, t);
            let (mut dlo, _) = (prev_d, d);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let dm = det_at(mid);
                if (hi - lo).abs() < 1e-9 {
                    break;
                }
                if dm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if dm.signum() == dlo.signum() {
                    lo = mid;
                    dlo = dm;
                } else {
                    hi = mid;
                }
            }
            points.push(ConjugatePoint {
                t: 0.5 * (lo + hi),
                degenerate: false,
            });
        }
        window.push((t, d));
        if window.len() > 3 {
            window.remove(0);
        }
        if window.len() == 3 {
            let (t0, d0) = window[0];
            let (t1, d1) = window[1];
            let (t2, d2) = window[2];
            if d1.abs() < d0.abs() && d1.abs() < d2.abs() && d0.signum() == d2.signum() {
                mins.push((t0, t2, t1));
            }
        }
        prev_t = t;
        prev_d = d;
    }

    // refine tangency candidates by ternary search on |det|
    for (mut lo, mut hi, _) in mins {
        for _ in 0..200 {
            if (hi - lo).abs() < 1e-10 {
                break;
            }
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if det_at(m1).abs() < det_at(m2).abs() {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t = 0.5 * (lo + hi);
        if det_at(t).abs() < 1e-12 {
            points.push(ConjugatePoint {
                t,
                degenerate: true,
            });
        }
    }

    points.sort_by(|x, y| x.t.partial_cmp(&y.t).unwrap());
    points.dedup_by(|x, y| (x.t - y.t).abs() < 1e-7 * width.abs().max(1.0));
    Ok(points)
}

/// The second-variation integral along a geodesic:
///
/// ```text
/// I(u) = int_a^b [ g(w, w) + g(u, R(u, v)v) ] dt + g(w, u)|_a - g(w, u)|_b
/// ```
///
/// with `w` the covariant rate of `u`. It vanishes on solutions of the
/// linearised flow and loses its boundary terms on fields vanishing at both
/// ends.
pub fn index_form_of_trajectory(
    k: &LinearConnection,
    g: &TangentMetric,
    geo: &GeodesicTrajectory,
    jac: &JacobiTrajectory,
    a: f64,
    b: f64,
) -> Result<f64, GeometryError> {
    let sampler = |t: f64| -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        Ok(jac.sample(t))
    };
    index_form_impl(k, g, geo, &sampler, a, b)
}

/// Index form of a supplied spatial field `u(t)` with rate `du(t)` (lengths
/// `n`); the covariant rate is assembled internally.
pub fn index_form_of_field(
    k: &LinearConnection,
    g: &TangentMetric,
    geo: &GeodesicTrajectory,
    u: &dyn Fn(f64) -> Vec<f64>,
    du: &dyn Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
) -> Result<f64, GeometryError> {
    let n = k.dim();
    let k2 = k.clone();
    let sampler = move |t: f64| -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        let (pos, vel) = geo.sample(t);
        let k_at = k2.components_at(&pos)?;
        let uv = u(t);
        let duv = du(t);
        let mut u_full = vec![0.0; n + 1];
        u_full[1..].copy_from_slice(&uv[..n]);
        let mut w_full = vec![0.0; n + 1];
        for i in 1..=n {
            let mut acc = duv[i - 1];
            for mu in 0..=n {
                for bslot in 1..=n {
                    acc -= k_at.get(&[mu, i, bslot]) * vel[mu] * u_full[bslot];
                }
            }
            w_full[i] = acc;
        }
        Ok((u_full, w_full))
    };
    index_form_impl(k, g, geo, &sampler, a, b)
}

fn index_form_impl(
    k: &LinearConnection,
    g: &TangentMetric,
    geo: &GeodesicTrajectory,
    field: &dyn Fn(f64) -> Result<(Vec<f64>, Vec<f64>), EvalError>,
    a: f64,
    b: f64,
) -> Result<f64, GeometryError> {
    let n = k.dim();
    if g.dim() != n || geo.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: g.dim().min(geo.dim()),
            context: "index form operands",
        });
    }
    let curv = curvature(k);
    let integrand = |t: f64| -> Result<f64, EvalError> {
        let (pos, vel) = geo.sample(t);
        let (u, w) = field(t)?;
        let g_at = g.values_at(&pos)?;
        let r_at = curv.at(&pos)?;
        let mut total = 0.0;
        for l in 0..=n {
            for m in 0..=n {
                total += g_at.get(&[l, m]) * w[l] * w[m];
            }
        }
        // g(u, R(u, v)v) with (R(u,v)v)^a = R_{l mu}^a_b u^l v^mu v^b
        for sigma in 0..=n {
            if u[sigma] == 0.0 {
                continue;
            }
            for alpha in 0..=n {
                let gs = g_at.get(&[sigma, alpha]);
                if gs == 0.0 {
                    continue;
                }
                let mut ru = 0.0;
                for l in 0..=n {
                    if u[l] == 0.0 {
                        continue;
                    }
                    for mu in 0..=n {
                        if vel[mu] == 0.0 {
                            continue;
                        }
                        for bslot in 0..=n {
                            if vel[bslot] == 0.0 {
                                continue;
                            }
                            ru += r_at.get(&[l, mu, alpha, bslot]) * u[l] * vel[mu] * vel[bslot];
                        }
                    }
                }
                total += gs * u[sigma] * ru;
            }
        }
        Ok(total)
    };

    let integral = adaptive_simpson(&integrand, a, b, 1e-9, 30)?;

    let boundary = |t: f64| -> Result<f64, EvalError> {
        let (pos, _) = geo.sample(t);
        let (u, w) = field(t)?;
        let g_at = g.values_at(&pos)?;
        let mut acc = 0.0;
        for l in 0..=n {
            for m in 0..=n {
                acc += g_at.get(&[l, m]) * w[l] * u[m];
            }
        }
        Ok(acc)
    };
    Ok(integral + boundary(a)? - boundary(b)?)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(
    f: &dyn Fn(f64) -> Result<f64, EvalError>,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<f64, GeometryError> {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> Result<f64, EvalError>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64, GeometryError> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm).map_err(GeometryError::Eval)?;
        let frm = f(rm).map_err(GeometryError::Eval)?;
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = left + right - whole;
        if err.abs() <= 15.0 * tol {
            return Ok(left + right + err / 15.0);
        }
        if depth == 0 {
            return Err(GeometryError::QuadratureNonConvergence {
                tol,
                err: err.abs(),
            });
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let fa = f(a).map_err(GeometryError::Eval)?;
    let fb = f(b).map_err(GeometryError::Eval)?;
    let m = 0.5 * (a + b);
    let fm = f(m).map_err(GeometryError::Eval)?;
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

/// The metric-lowered curvature pairing
/// `g(u, R(u, v)v) = g_{sigma alpha} R_{l mu}^alpha_nu u^l v^mu u^sigma v^nu`
/// at a point. Negative values along a geodesic signal conjugate points
/// within `pi / sqrt(-value)` for unit fields; positive values rule them
/// out.
pub fn sectional_scalar(
    k: &LinearConnection,
    g: &TangentMetric,
    p: &ChartPoint,
    u: &TangentVector,
    v: &TangentVector,
) -> Result<f64, GeometryError> {
    let n = k.dim();
    if p.dim() != n || u.dim() != n || v.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: p.dim().min(u.dim()).min(v.dim()),
            context: "sectional scalar operands",
        });
    }
    let r_at = curvature(k).at(p.coords())?;
    let g_at = g.values_at(p.coords())?;
    let mut acc = 0.0;
    for sigma in 0..=n {
        for alpha in 0..=n {
            let gs = g_at.get(&[sigma, alpha]);
            if gs == 0.0 {
                continue;
            }
            for l in 0..=n {
                for mu in 0..=n {
                    for nu in 0..=n {
                        acc += gs
                            * r_at.get(&[l, mu, alpha, nu])
                            * u.dot[l]
                            * v.dot[mu]
                            * u.dot[sigma]
                            * v.dot[nu];
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Shorthand for driving a geodesic of a linear connection; clones share the
/// connection identity, so the result can feed `integrate_jacobi` against
/// `k` directly.
pub fn integrate_connection_geodesic(
    k: &LinearConnection,
    q0: &[f64],
    dq0: &[f64],
    span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<GeodesicTrajectory, GeometryError> {
    let tk = TangentConnection::Linear(k.clone());
    let source = GeodesicSource::Connection(&tk);
    integrate_geodesic(source, q0, dq0, span, cfg)
}
