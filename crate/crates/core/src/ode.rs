//! Runge-Kutta integration with dense output.
//!
//! Two methods are provided: fixed-step classical RK4 with cubic Hermite
//! interpolation, and the Dormand-Prince 5(4) pair with its standard
//! fourth-order continuous extension. Dense output is stored per accepted
//! step, so a finished solution can be sampled at any time in its span.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{EvalError, OdeError};

/// Right-hand side of a first-order system `y' = f(t, y)`.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError>;
}

/// Adapter so closures can serve as right-hand sides.
pub struct FnRhs<F> {
    dim: usize,
    f: F,
}

impl<F> FnRhs<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnRhs { dim, f }
    }
}

impl<F> OdeRhs for FnRhs<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Dormand-Prince 5(4) with adaptive step control.
    Rk45,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
    pub dense: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: None,
            max_steps: 1_000_000,
            dense: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(OdeError::BadConfig("tolerances must be positive"));
        }
        if let Method::Rk4 { step } = self.method {
            if !(step > 0.0) {
                return Err(OdeError::BadConfig("fixed step must be positive"));
            }
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(OdeError::BadConfig("max step must be positive"));
            }
        }
        Ok(())
    }
}

enum StepInterp {
    /// Dormand-Prince continuous extension coefficients.
    Dopri { rcont: [Vec<f64>; 5] },
    /// Cubic Hermite data for fixed-step methods.
    Hermite {
        y0: Vec<f64>,
        y1: Vec<f64>,
        f0: Vec<f64>,
        f1: Vec<f64>,
    },
}

struct StepRecord {
    t0: f64,
    h: f64,
    interp: StepInterp,
}

/// Statistics of a finished integration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// A dense-output solution over `[t0, t1]`.
///
/// Immutable once returned; sampling is pure, so solutions are safe to share
/// across threads.
pub struct OdeSolution {
    t0: f64,
    t1: f64,
    dim: usize,
    steps: Vec<StepRecord>,
    end_state: Vec<f64>,
    pub stats: IntegrationStats,
}

impl core::fmt::Debug for OdeSolution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("OdeSolution")
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("dim", &self.dim)
            .field("steps", &self.steps.len())
            .field("stats", &self.stats)
            .finish()
    }
}

impl OdeSolution {
    pub fn span(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn end_state(&self) -> &[f64] {
        &self.end_state
    }

    /// Interpolated state at `t` (clamped to the integration span; times may
    /// exceed it only by floating-point slack).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!(!self.steps.is_empty());
        let t = t.clamp(self.t0.min(self.t1), self.t0.max(self.t1));
        // binary search for the step containing t
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        let forward = self.t1 >= self.t0;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let step = &self.steps[mid];
            let end = step.t0 + step.h;
            let contains = if forward { t <= end } else { t >= end };
            if contains {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let step = &self.steps[lo];
        let theta = ((t - step.t0) / step.h).clamp(0.0, 1.0);
        match &step.interp {
            StepInterp::Dopri { rcont } => {
                let th1 = 1.0 - theta;
                for k in 0..self.dim {
                    out[k] = rcont[0][k]
                        + theta
                            * (rcont[1][k]
                                + th1 * (rcont[2][k] + theta * (rcont[3][k] + th1 * rcont[4][k])));
                }
            }
            StepInterp::Hermite { y0, y1, f0, f1 } => {
                let h = step.h;
                let t2 = theta * theta;
                let t3 = t2 * theta;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + theta;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                for k in 0..self.dim {
                    out[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
                }
            }
        }
    }
}

/// Integrate `rhs` over `span` from `y0`.
pub fn integrate(
    rhs: &dyn OdeRhs,
    span: (f64, f64),
    y0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<OdeSolution, OdeError> {
    cfg.validate()?;
    let (t0, t1) = span;
    if !(t1 - t0).is_finite() || t0 == t1 {
        return Err(OdeError::DegenerateSpan);
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteState {
            t: t0,
            state: y0.to_vec(),
        });
    }
    match cfg.method {
        Method::Rk4 { step } => rk4_fixed(rhs, t0, t1, y0, step, cfg),
        Method::Rk45 => dopri5(rhs, t0, t1, y0, cfg),
    }
}

fn rk4_fixed(
    rhs: &dyn OdeRhs,
    t0: f64,
    t1: f64,
    y0: &[f64],
    step: f64,
    cfg: &IntegratorConfig,
) -> Result<OdeSolution, OdeError> {
    let dim = rhs.dim();
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut stats = IntegrationStats::default();
    let mut steps = Vec::new();

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];

    rhs.eval(t, &y, &mut k1)?;
    stats.rhs_evals += 1;

    while (t1 - t) * dir > 1e-14 * (1.0 + t.abs()) {
        if stats.accepted >= cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                t,
                max_steps: cfg.max_steps,
            });
        }
        // clip the final step to land exactly on t1
        let h = if (t + step * dir - t1) * dir > 0.0 {
            t1 - t
        } else {
            step * dir
        };

        for k in 0..dim {
            scratch[k] = y[k] + 0.5 * h * k1[k];
        }
        rhs.eval(t + 0.5 * h, &scratch, &mut k2)?;
        for k in 0..dim {
            scratch[k] = y[k] + 0.5 * h * k2[k];
        }
        rhs.eval(t + 0.5 * h, &scratch, &mut k3)?;
        for k in 0..dim {
            scratch[k] = y[k] + h * k3[k];
        }
        rhs.eval(t + h, &scratch, &mut k4)?;
        stats.rhs_evals += 3;

        let mut y1 = vec![0.0; dim];
        for k in 0..dim {
            y1[k] = y[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if y1.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteState { t, state: y });
        }
        let mut f1 = vec![0.0; dim];
        rhs.eval(t + h, &y1, &mut f1)?;
        stats.rhs_evals += 1;

        if cfg.dense {
            steps.push(StepRecord {
                t0: t,
                h,
                interp: StepInterp::Hermite {
                    y0: y.clone(),
                    y1: y1.clone(),
                    f0: k1.clone(),
                    f1: f1.clone(),
                },
            });
        }
        t += h;
        y = y1;
        k1 = f1;
        stats.accepted += 1;
    }

    Ok(OdeSolution {
        t0,
        t1,
        dim,
        steps,
        end_state: y,
        stats,
    })
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
// Error weights b5 - b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

fn dopri5(
    rhs: &dyn OdeRhs,
    t0: f64,
    t1: f64,
    y0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<OdeSolution, OdeError> {
    let dim = rhs.dim();
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let max_step = cfg.max_step.unwrap_or(span).min(span);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut stats = IntegrationStats::default();
    let mut steps = Vec::new();

    let mut k = [(); 7].map(|_| vec![0.0; dim]);
    let mut scratch = vec![0.0; dim];

    rhs.eval(t, &y, &mut k[0])?;
    stats.rhs_evals += 1;

    let mut h = initial_step(rhs, t, &y, &k[0], dir, max_step, cfg, &mut stats)?;

    loop {
        if (t1 - t) * dir <= 1e-14 * (1.0 + t.abs()) {
            break;
        }
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                t,
                max_steps: cfg.max_steps,
            });
        }
        if h.abs() < 1e-14 * (1.0 + t.abs()) {
            return Err(OdeError::StepUnderflow { t, state: y });
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }

        // stages 2..7
        for stage in 0..6 {
            for (idx, slot) in scratch.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        acc += a * kj[idx];
                    }
                }
                *slot = y[idx] + h * acc;
            }
            rhs.eval(t + C[stage] * h, &scratch, &mut k[stage + 1])?;
        }
        stats.rhs_evals += 6;

        // fifth-order solution is the last stage evaluation point (FSAL)
        let mut y1 = vec![0.0; dim];
        for idx in 0..dim {
            let acc = A[5][0] * k[0][idx]
                + A[5][2] * k[2][idx]
                + A[5][3] * k[3][idx]
                + A[5][4] * k[4][idx]
                + A[5][5] * k[5][idx];
            y1[idx] = y[idx] + h * acc;
        }

        // error estimate
        let mut err = 0.0f64;
        for idx in 0..dim {
            let e = E[0] * k[0][idx]
                + E[2] * k[2][idx]
                + E[3] * k[3][idx]
                + E[4] * k[4][idx]
                + E[5] * k[5][idx]
                + E[6] * k[6][idx];
            let sc = cfg.abs_tol + cfg.rel_tol * y[idx].abs().max(y1[idx].abs());
            let r = h * e / sc;
            err += r * r;
        }
        err = libm::sqrt(err / dim as f64);

        if !err.is_finite() || y1.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteState { t, state: y });
        }

        if err <= 1.0 {
            if cfg.dense {
                let mut rcont = [(); 5].map(|_| vec![0.0; dim]);
                for idx in 0..dim {
                    let dy = y1[idx] - y[idx];
                    let bspl = h * k[0][idx] - dy;
                    rcont[0][idx] = y[idx];
                    rcont[1][idx] = dy;
                    rcont[2][idx] = bspl;
                    rcont[3][idx] = dy - h * k[6][idx] - bspl;
                    let mut dterm = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        if D[j] != 0.0 {
                            dterm += D[j] * kj[idx];
                        }
                    }
                    rcont[4][idx] = h * dterm;
                }
                steps.push(StepRecord {
                    t0: t,
                    h,
                    interp: StepInterp::Dopri { rcont },
                });
            }
            t += h;
            core::mem::swap(&mut y, &mut y1);
            k.swap(0, 6); // FSAL
            stats.accepted += 1;

            let factor = if err == 0.0 {
                10.0
            } else {
                (0.9 * libm::pow(err, -0.2)).clamp(0.2, 10.0)
            };
            h = (h * factor).clamp(-max_step, max_step);
            if h == 0.0 {
                h = dir * 1e-14;
            }
        } else {
            stats.rejected += 1;
            let factor = (0.9 * libm::pow(err, -0.2)).clamp(0.2, 1.0);
            h *= factor;
        }
    }

    Ok(OdeSolution {
        t0,
        t1,
        dim,
        steps,
        end_state: y,
        stats,
    })
}

#[allow(clippy::too_many_arguments)]
fn initial_step(
    rhs: &dyn OdeRhs,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    max_step: f64,
    cfg: &IntegratorConfig,
    stats: &mut IntegrationStats,
) -> Result<f64, OdeError> {
    let dim = y0.len();
    let sc = |y: f64| cfg.abs_tol + cfg.rel_tol * y.abs();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for idx in 0..dim {
        let s = sc(y0[idx]);
        d0 += (y0[idx] / s) * (y0[idx] / s);
        d1 += (f0[idx] / s) * (f0[idx] / s);
    }
    d0 = libm::sqrt(d0 / dim as f64);
    d1 = libm::sqrt(d1 / dim as f64);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(max_step);

    // one explicit Euler probe to estimate the second derivative
    let mut y1 = vec![0.0; dim];
    for idx in 0..dim {
        y1[idx] = y0[idx] + dir * h0 * f0[idx];
    }
    let mut f1 = vec![0.0; dim];
    rhs.eval(t0 + dir * h0, &y1, &mut f1)?;
    stats.rhs_evals += 1;
    let mut d2 = 0.0;
    for idx in 0..dim {
        let s = sc(y0[idx]);
        let df = (f1[idx] - f0[idx]) / s;
        d2 += df * df;
    }
    d2 = libm::sqrt(d2 / dim as f64) / h0;

    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        libm::pow(0.01 / d1.max(d2), 0.2)
    };
    Ok(dir * h0.min(h1).min(max_step).max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Harmonic;
    impl OdeRhs for Harmonic {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    #[test]
    fn dopri_integrates_harmonic_oscillator() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(&Harmonic, (0.0, 10.0), &[1.0, 0.0], &cfg).unwrap();
        let end = sol.end_state();
        assert!((end[0] - libm::cos(10.0)).abs() < 1e-8);
        assert!((end[1] + libm::sin(10.0)).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(&Harmonic, (0.0, 6.0), &[1.0, 0.0], &cfg).unwrap();
        for k in 0..=120 {
            let t = 6.0 * k as f64 / 120.0;
            let y = sol.eval(t);
            assert!(
                (y[0] - libm::cos(t)).abs() < 1e-8,
                "q at t={t}: {} vs {}",
                y[0],
                libm::cos(t)
            );
        }
    }

    #[test]
    fn rk4_shows_fourth_order_convergence() {
        let err_for = |h: f64| {
            let cfg = IntegratorConfig {
                method: Method::Rk4 { step: h },
                ..IntegratorConfig::default()
            };
            let sol = integrate(&Harmonic, (0.0, 2.0), &[1.0, 0.0], &cfg).unwrap();
            (sol.end_state()[0] - libm::cos(2.0)).abs()
        };
        let e1 = err_for(0.02);
        let e2 = err_for(0.01);
        let order = libm::log2(e1 / e2);
        assert!(
            (order - 4.0).abs() < 0.3,
            "observed order {order} (errors {e1}, {e2})"
        );
    }

    #[test]
    fn backwards_span_works() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(&Harmonic, (0.0, -3.0), &[1.0, 0.0], &cfg).unwrap();
        assert!((sol.end_state()[0] - libm::cos(3.0)).abs() < 1e-8);
        assert!((sol.eval(-1.5)[0] - libm::cos(1.5)).abs() < 1e-8);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = IntegratorConfig {
            abs_tol: 0.0,
            ..IntegratorConfig::default()
        };
        assert!(matches!(
            integrate(&Harmonic, (0.0, 1.0), &[1.0, 0.0], &cfg),
            Err(OdeError::BadConfig(_))
        ));
    }

    struct Blowup;
    impl OdeRhs for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    #[test]
    fn finite_time_blowup_reports_last_state() {
        // y' = y^2, y(0) = 1 blows up at t = 1
        let cfg = IntegratorConfig {
            max_steps: 100_000,
            ..IntegratorConfig::default()
        };
        let err = integrate(&Blowup, (0.0, 2.0), &[1.0], &cfg).unwrap_err();
        match err {
            OdeError::StepUnderflow { t, .. }
            | OdeError::NonFiniteState { t, .. }
            | OdeError::MaxStepsExceeded { t, .. } => {
                assert!(t < 1.01, "failure reported at t={t}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
