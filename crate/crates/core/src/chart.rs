//! Time-preserving chart transitions `(t, q) -> (t, q')` and their tangent
//! lifts.
//!
//! A `FrameMap` stores both directions of the map as scalar fields; partial
//! derivatives of each component are prepared once at construction so that
//! expression-backed maps keep exact derivatives all the way into connection
//! transforms and inertial-force computations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{EvalError, GeometryError};
use crate::expr::Expr;
use crate::field::{require_velocity_independent, ScalarField, Slot};
use crate::linalg;
use crate::tensor::{ChartPoint, TangentVector};

/// Determinant magnitude below which a spatial Jacobian counts as singular.
const SINGULAR_DET: f64 = 1e-12;

/// An invertible chart transition preserving the time coordinate.
///
/// `forward[i]` maps `(t, q)` to the i-th new coordinate; `inverse[i]` maps
/// `(t, q')` back. Index 0 holds the identity time map so that every
/// component array is sized `n + 1`.
#[derive(Debug, Clone)]
pub struct FrameMap {
    n: usize,
    forward: Vec<ScalarField>,
    inverse: Vec<ScalarField>,
    /// fwd_d[i][lambda] = d forward^i / d q^lambda
    fwd_d: Vec<Vec<ScalarField>>,
    /// fwd_dd[i][lambda][mu] = second partials of forward^i
    fwd_dd: Vec<Vec<Vec<ScalarField>>>,
    inv_d: Vec<Vec<ScalarField>>,
    inv_dd: Vec<Vec<Vec<ScalarField>>>,
}

impl FrameMap {
    /// Build from spatial components (`forward_spatial.len() == n`); the time
    /// component is fixed to the identity.
    pub fn new(
        n: usize,
        forward_spatial: Vec<ScalarField>,
        inverse_spatial: Vec<ScalarField>,
    ) -> Result<FrameMap, GeometryError> {
        if forward_spatial.len() != n || inverse_spatial.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                found: forward_spatial.len().min(inverse_spatial.len()),
                context: "frame map spatial components",
            });
        }
        require_velocity_independent(&forward_spatial)?;
        require_velocity_independent(&inverse_spatial)?;

        let time = ScalarField::from_expr(n, Expr::time());
        let mut forward = vec![time.clone()];
        forward.extend(forward_spatial);
        let mut inverse = vec![time];
        inverse.extend(inverse_spatial);

        let fwd_d = component_partials(&forward, n);
        let inv_d = component_partials(&inverse, n);
        let fwd_dd = second_partials(&fwd_d, n);
        let inv_dd = second_partials(&inv_d, n);
        Ok(FrameMap {
            n,
            forward,
            inverse,
            fwd_d,
            fwd_dd,
            inv_d,
            inv_dd,
        })
    }

    pub fn identity(n: usize) -> FrameMap {
        let fwd: Vec<ScalarField> = (1..=n)
            .map(|i| ScalarField::from_expr(n, Expr::coord(i)))
            .collect();
        FrameMap::new(n, fwd.clone(), fwd).expect("identity map is well formed")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn forward_component(&self, i: usize) -> &ScalarField {
        &self.forward[i]
    }

    pub fn inverse_component(&self, i: usize) -> &ScalarField {
        &self.inverse[i]
    }

    pub(crate) fn forward_partial(&self, i: usize, lambda: usize) -> &ScalarField {
        &self.fwd_d[i][lambda]
    }

    pub(crate) fn forward_second_partial(&self, i: usize, l: usize, m: usize) -> &ScalarField {
        &self.fwd_dd[i][l][m]
    }

    pub(crate) fn inverse_partial(&self, i: usize, lambda: usize) -> &ScalarField {
        &self.inv_d[i][lambda]
    }

    pub(crate) fn inverse_second_partial(&self, i: usize, l: usize, m: usize) -> &ScalarField {
        &self.inv_dd[i][l][m]
    }

    /// Map a position through the forward direction (`pos[0]` unchanged).
    pub fn forward_pos(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        map_pos(&self.forward, pos)
    }

    pub fn inverse_pos(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        map_pos(&self.inverse, pos)
    }

    /// Spatial Jacobian of the forward map: rows `i`, columns `j`, both `1..=n`
    /// (returned as an `n x n` row-major matrix).
    pub fn forward_spatial_jacobian(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        let n = self.n;
        let mut jac = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                jac[(i - 1) * n + (j - 1)] = self.fwd_d[i][j].eval_base(pos)?;
            }
        }
        Ok(jac)
    }

    /// Tangent lift of the forward map: `v'^0 = v^0`,
    /// `v'^i = (d_j q'^i) v^j + (d_t q'^i) v^0`.
    pub fn push_vector(&self, v: &TangentVector) -> Result<TangentVector, GeometryError> {
        if v.dim() != self.n {
            return Err(GeometryError::Dimension {
                expected: self.n,
                found: v.dim(),
                context: "tangent vector dimension",
            });
        }
        let pos = v.base.coords();
        let jac = self.forward_spatial_jacobian(pos)?;
        if linalg::det(&jac, self.n).abs() < SINGULAR_DET {
            return Err(GeometryError::SingularFrame { pos: pos.to_vec() });
        }
        let mut dot = vec![v.dot[0]];
        for i in 1..=self.n {
            let mut acc = self.fwd_d[i][0].eval_base(pos)? * v.dot[0];
            for j in 1..=self.n {
                acc += jac[(i - 1) * self.n + (j - 1)] * v.dot[j];
            }
            dot.push(acc);
        }
        let base = ChartPoint::new(self.forward_pos(pos)?)?;
        TangentVector::new(base, dot)
    }

    /// Tangent lift of the inverse map, used to pull velocities back to the
    /// original chart when evaluating transformed connections.
    pub fn pull_velocity(&self, pos_new: &[f64], vel_new: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut vel = vec![vel_new[0]];
        for i in 1..=self.n {
            let mut acc = self.inv_d[i][0].eval_base(pos_new)? * vel_new[0];
            for j in 1..=self.n {
                acc += self.inv_d[i][j].eval_base(pos_new)? * vel_new.get(j).copied().unwrap_or(0.0);
            }
            vel.push(acc);
        }
        Ok(vel)
    }

    /// Inverse Jacobian factors `d q^mu / d q'^lambda` at a new-chart
    /// position, taken from the declared inverse map. Row `mu = 0` is
    /// `(1, 0, ..)` since time is shared.
    pub fn inverse_jacobian(&self, pos_new: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = self.n + 1;
        let mut jac = vec![0.0; d * d];
        jac[0] = 1.0;
        for i in 1..=self.n {
            for lambda in 0..=self.n {
                jac[i * d + lambda] = self.inv_d[i][lambda].eval_base(pos_new)?;
            }
        }
        Ok(jac)
    }

    /// Full forward Jacobian (time row `(1, 0..)`) at an old-chart position.
    pub fn forward_jacobian(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = self.n + 1;
        let mut jac = vec![0.0; d * d];
        jac[0] = 1.0;
        for i in 1..=self.n {
            for lambda in 0..=self.n {
                jac[i * d + lambda] = self.fwd_d[i][lambda].eval_base(pos)?;
            }
        }
        Ok(jac)
    }

    /// Check `forward(inverse(p)) = p` on the probes and that the spatial
    /// Jacobian stays invertible there.
    pub fn validate(&self, probes: &[Vec<f64>], tol: f64) -> Result<(), GeometryError> {
        let mut max_dev = 0.0f64;
        for pos in probes {
            let back = self.forward_pos(&self.inverse_pos(pos)?)?;
            for (a, b) in back.iter().zip(pos.iter()) {
                max_dev = max_dev.max((a - b).abs());
            }
            let old = self.inverse_pos(pos)?;
            let jac = self.forward_spatial_jacobian(&old)?;
            if linalg::det(&jac, self.n).abs() < SINGULAR_DET {
                return Err(GeometryError::SingularFrame { pos: old });
            }
        }
        if max_dev > tol {
            return Err(GeometryError::FrameRoundTrip { max_dev, tol });
        }
        Ok(())
    }

    /// Largest discrepancy between the declared inverse Jacobian and the
    /// numerical inverse of the forward Jacobian at a new-chart position.
    pub fn jacobian_consistency(&self, pos_new: &[f64]) -> Result<f64, GeometryError> {
        let d = self.n + 1;
        let declared = self.inverse_jacobian(pos_new)?;
        let old = self.inverse_pos(pos_new)?;
        let fwd = self.forward_jacobian(&old)?;
        let inv = linalg::invert(&fwd, d)
            .ok_or(GeometryError::SingularFrame { pos: old })?;
        let mut max_dev = 0.0f64;
        for k in 0..d * d {
            max_dev = max_dev.max((declared[k] - inv[k]).abs());
        }
        Ok(max_dev)
    }
}

fn map_pos(components: &[ScalarField], pos: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::with_capacity(components.len());
    out.push(pos[0]);
    for field in &components[1..] {
        out.push(field.eval_base(pos)?);
    }
    Ok(out)
}

fn component_partials(components: &[ScalarField], n: usize) -> Vec<Vec<ScalarField>> {
    components
        .iter()
        .map(|c| (0..=n).map(|l| c.partial(Slot::Pos(l))).collect())
        .collect()
}

fn second_partials(first: &[Vec<ScalarField>], n: usize) -> Vec<Vec<Vec<ScalarField>>> {
    first
        .iter()
        .map(|row| {
            row.iter()
                .map(|d| (0..=n).map(|m| d.partial(Slot::Pos(m))).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolTable};

    fn fields(texts: &[&str], n: usize, symbols: &SymbolTable) -> Vec<ScalarField> {
        texts
            .iter()
            .map(|t| ScalarField::from_expr(n, parse(t, n, symbols).unwrap()))
            .collect()
    }

    fn boost(v: f64) -> FrameMap {
        let mut tbl = SymbolTable::new();
        tbl.insert("v", v);
        FrameMap::new(
            1,
            fields(&["q1 + v*t"], 1, &tbl),
            fields(&["q1 - v*t"], 1, &tbl),
        )
        .unwrap()
    }

    pub(crate) fn rotation(omega: f64) -> FrameMap {
        let mut tbl = SymbolTable::new();
        tbl.insert("w", omega);
        FrameMap::new(
            2,
            fields(
                &["q1*cos(w*t) - q2*sin(w*t)", "q1*sin(w*t) + q2*cos(w*t)"],
                2,
                &tbl,
            ),
            fields(
                &["q1*cos(w*t) + q2*sin(w*t)", "-q1*sin(w*t) + q2*cos(w*t)"],
                2,
                &tbl,
            ),
        )
        .unwrap()
    }

    #[test]
    fn identity_push_is_identity() {
        let f = FrameMap::identity(2);
        let base = ChartPoint::from_time_and_space(0.3, &[1.0, -2.0]).unwrap();
        let v = TangentVector::new(base, vec![1.0, 0.5, -0.25]).unwrap();
        let pushed = f.push_vector(&v).unwrap();
        assert_eq!(pushed, v);
    }

    #[test]
    fn boost_push_adds_frame_velocity() {
        let f = boost(2.0);
        let base = ChartPoint::from_time_and_space(0.0, &[0.0]).unwrap();
        let v = TangentVector::new(base, vec![1.0, 3.0]).unwrap();
        let pushed = f.push_vector(&v).unwrap();
        assert_eq!(pushed.dot, vec![1.0, 5.0]);
    }

    #[test]
    fn rotation_push_matches_finite_differences() {
        let f = rotation(1.0);
        let base = ChartPoint::from_time_and_space(0.4, &[1.0, -0.5]).unwrap();
        let v = TangentVector::new(base.clone(), vec![1.0, 0.7, 0.2]).unwrap();
        let pushed = f.push_vector(&v).unwrap();
        // finite difference of the forward map along the curve p + s*v
        let h = 1e-6;
        let mut hi = base.coords().to_vec();
        let mut lo = hi.clone();
        for k in 0..3 {
            hi[k] += h * v.dot[k];
            lo[k] -= h * v.dot[k];
        }
        let fhi = f.forward_pos(&hi).unwrap();
        let flo = f.forward_pos(&lo).unwrap();
        for k in 0..3 {
            let fd = (fhi[k] - flo[k]) / (2.0 * h);
            assert!(
                (fd - pushed.dot[k]).abs() < 1e-8,
                "component {k}: fd {fd} vs push {}",
                pushed.dot[k]
            );
        }
    }

    #[test]
    fn validate_accepts_honest_inverses_and_rejects_wrong_ones() {
        let f = rotation(0.7);
        let probes: Vec<Vec<f64>> = Region::unit(2)
            .position_lattice(3)
            .into_iter()
            .collect();
        f.validate(&probes, 1e-9).unwrap();

        let broken = FrameMap::new(
            2,
            fields(&["q1 + t", "q2"], 2, &SymbolTable::new()),
            fields(&["q1", "q2"], 2, &SymbolTable::new()),
        )
        .unwrap();
        assert!(broken.validate(&probes, 1e-9).is_err());
    }

    #[test]
    fn jacobian_consistency_small_for_exact_pairs() {
        let f = rotation(0.9);
        let dev = f.jacobian_consistency(&[0.2, 0.4, -1.0]).unwrap();
        assert!(dev < 1e-12, "deviation {dev}");
    }

    use crate::field::Region;
}
