//! Second-order force laws `q''^i = xi^i(t, q, q')`, their associated
//! connections on the velocity phase space, and reference frames.
//!
//! The two directions of the correspondence are
//!
//! ```text
//! xi^i    = gamma^i_0 + dq^j gamma^i_j
//! gamma^i_j = (1/2) d xi^i / d dq^j
//! gamma^i_0 = xi^i - (1/2) dq^j d xi^i / d dq^j
//! ```
//!
//! The connection produced from a force law is always symmetric; converting
//! back recovers the original force law identically. Distinct connections may
//! induce the same force law, and they do so exactly when they differ by an
//! antisymmetric part.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{EvalError, GeometryError};
use crate::field::{JetPoint, ScalarField, Slot};

pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-9;

/// Velocity-independent coefficient fields of a quadratic force law
/// `xi^i = a^i_jk dq^j dq^k + b^i_j dq^j + f^i`.
///
/// All arrays are sized `n + 1` with zero temporal slots; `a` is symmetric in
/// its two lower indices.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub a: Vec<Vec<Vec<ScalarField>>>,
    pub b: Vec<Vec<ScalarField>>,
    pub f: Vec<ScalarField>,
}

impl QuadraticForm {
    /// Largest deviation from `a^i_jk = a^i_kj` over the probes.
    pub fn asymmetry(&self, probes: &[JetPoint]) -> Result<f64, EvalError> {
        let n = self.f.len() - 1;
        let mut worst = 0.0f64;
        for p in probes {
            for i in 1..=n {
                for j in 1..=n {
                    for k in j + 1..=n {
                        let x = self.a[i][j][k].eval_base(&p.pos)?;
                        let y = self.a[i][k][j].eval_base(&p.pos)?;
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// A second-order dynamic equation: `n` scalar fields `xi^i(t, q, dq)`,
/// optionally with a declared quadratic form.
#[derive(Debug, Clone)]
pub struct DynamicEquation {
    n: usize,
    xi: Vec<ScalarField>,
    quadratic: Option<QuadraticForm>,
    conservative: bool,
}

impl DynamicEquation {
    /// General force law from `n` spatial component fields.
    pub fn from_fields(n: usize, components: Vec<ScalarField>) -> Result<Self, GeometryError> {
        if components.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                found: components.len(),
                context: "force law components",
            });
        }
        let mut xi = vec![ScalarField::zero(n)];
        xi.extend(components);
        Ok(DynamicEquation {
            n,
            xi,
            quadratic: None,
            conservative: false,
        })
    }

    /// Quadratic force law from declared coefficient fields (indices `1..=n`;
    /// temporal slots are padded internally). `a` must be symmetric in its
    /// lower pair; this is checked on `probes`.
    pub fn quadratic(
        n: usize,
        a: Vec<Vec<Vec<ScalarField>>>,
        b: Vec<Vec<ScalarField>>,
        f: Vec<ScalarField>,
        probes: &[JetPoint],
    ) -> Result<Self, GeometryError> {
        if a.len() != n || b.len() != n || f.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                found: a.len().min(b.len()).min(f.len()),
                context: "quadratic coefficient arrays",
            });
        }
        let all = |fields: &[ScalarField]| fields.iter().any(|x| x.depends_on_velocities());
        for ai in &a {
            if ai.len() != n || ai.iter().any(|row| row.len() != n) {
                return Err(GeometryError::Dimension {
                    expected: n,
                    found: ai.len(),
                    context: "quadratic `a` coefficient rows",
                });
            }
            if ai.iter().any(|row| all(row)) {
                return Err(GeometryError::VelocityDependent);
            }
        }
        for bi in &b {
            if bi.len() != n {
                return Err(GeometryError::Dimension {
                    expected: n,
                    found: bi.len(),
                    context: "quadratic `b` coefficient rows",
                });
            }
            if all(bi) {
                return Err(GeometryError::VelocityDependent);
            }
        }
        if all(&f) {
            return Err(GeometryError::VelocityDependent);
        }

        let pad3 = pad_cube(n, a);
        let pad2 = pad_square(n, b);
        let pad1 = pad_vector(n, f);
        let form = QuadraticForm {
            a: pad3,
            b: pad2,
            f: pad1,
        };
        let dev = form.asymmetry(probes)?;
        if dev > DEFAULT_SYMMETRY_TOL {
            return Err(GeometryError::AsymmetricCoefficients { max_dev: dev });
        }

        // materialise the general evaluator from the closed form
        let mut xi = vec![ScalarField::zero(n)];
        for i in 1..=n {
            let mut acc = form.f[i].clone();
            for j in 1..=n {
                acc = acc.plus(&form.b[i][j].times_velocity(j));
                for k in 1..=n {
                    acc = acc.plus(&form.a[i][j][k].times_velocity(j).times_velocity(k));
                }
            }
            xi.push(acc);
        }
        Ok(DynamicEquation {
            n,
            xi,
            quadratic: Some(form),
            conservative: false,
        })
    }

    pub(crate) fn with_quadratic(
        n: usize,
        xi: Vec<ScalarField>,
        quadratic: Option<QuadraticForm>,
    ) -> Self {
        DynamicEquation {
            n,
            xi,
            quadratic,
            conservative: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.xi[i]
    }

    pub fn quadratic_form(&self) -> Option<&QuadraticForm> {
        self.quadratic.as_ref()
    }

    pub fn is_conservative(&self) -> bool {
        self.conservative
    }

    /// Acceleration components at a jet point (`out[0] = 0`).
    pub fn acceleration(&self, pos: &[f64], vel: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.n + 1];
        for i in 1..=self.n {
            out[i] = self.xi[i].eval(pos, vel)?;
        }
        Ok(out)
    }
}

/// Connection coefficients `gamma^i_lambda(t, q, dq)` on the velocity phase
/// space, with the affine form stored when the coefficients are affine in
/// the velocities.
#[derive(Debug, Clone)]
pub struct DynamicConnection {
    n: usize,
    /// gamma[i][lambda], rows `i = 1..=n` (row 0 zero).
    gamma: Vec<Vec<ScalarField>>,
    /// affine[i][lambda][mu]: `gamma^i_lambda = g[i][lambda][0] +
    /// g[i][lambda][j] dq^j`, velocity-independent fields.
    affine: Option<Vec<Vec<Vec<ScalarField>>>>,
}

impl DynamicConnection {
    pub fn from_general(n: usize, coefficients: Vec<Vec<ScalarField>>) -> Result<Self, GeometryError> {
        if coefficients.len() != n || coefficients.iter().any(|row| row.len() != n + 1) {
            return Err(GeometryError::Dimension {
                expected: n,
                found: coefficients.len(),
                context: "dynamic connection coefficient rows",
            });
        }
        let mut gamma = vec![vec![ScalarField::zero(n); n + 1]];
        gamma.extend(coefficients);
        Ok(DynamicConnection {
            n,
            gamma,
            affine: None,
        })
    }

    /// Build from affine coefficients `g[i][lambda][mu]` with `i = 1..=n` and
    /// `lambda, mu = 0..=n` (`mu = 0` the inhomogeneous part).
    pub fn from_affine(n: usize, g: Vec<Vec<Vec<ScalarField>>>) -> Result<Self, GeometryError> {
        if g.len() != n
            || g.iter()
                .any(|m| m.len() != n + 1 || m.iter().any(|row| row.len() != n + 1))
        {
            return Err(GeometryError::Dimension {
                expected: n,
                found: g.len(),
                context: "affine dynamic connection coefficients",
            });
        }
        for m in &g {
            for row in m {
                crate::field::require_velocity_independent(row)?;
            }
        }
        let mut padded = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]];
        padded.extend(g);

        let mut gamma = vec![vec![ScalarField::zero(n); n + 1]];
        for i in 1..=n {
            let mut row = Vec::with_capacity(n + 1);
            for lambda in 0..=n {
                let mut acc = padded[i][lambda][0].clone();
                for j in 1..=n {
                    acc = acc.plus(&padded[i][lambda][j].times_velocity(j));
                }
                row.push(acc);
            }
            gamma.push(row);
        }
        Ok(DynamicConnection {
            n,
            gamma,
            affine: Some(padded),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Coefficient field `gamma^i_lambda`.
    pub fn coefficient(&self, i: usize, lambda: usize) -> &ScalarField {
        &self.gamma[i][lambda]
    }

    /// Affine coefficient fields `gamma^i_{lambda mu}` when present.
    pub fn affine_coefficients(&self) -> Option<&Vec<Vec<Vec<ScalarField>>>> {
        self.affine.as_ref()
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    /// Pointwise symmetry test at the default tolerance.
    pub fn is_symmetric(&self, probes: &[JetPoint]) -> Result<bool, EvalError> {
        self.is_symmetric_with_tol(probes, DEFAULT_SYMMETRY_TOL)
    }

    /// Symmetry of the connection: for the affine form this compares
    /// `gamma^i_{lambda mu}` against `gamma^i_{mu lambda}` componentwise; in
    /// general it compares the velocity derivatives `d gamma^k_i / d dq^j`
    /// against `d gamma^k_j / d dq^i` at the probes.
    pub fn is_symmetric_with_tol(
        &self,
        probes: &[JetPoint],
        tol: f64,
    ) -> Result<bool, EvalError> {
        let n = self.n;
        if let Some(g) = &self.affine {
            for p in probes {
                for i in 1..=n {
                    for l in 0..=n {
                        for m in l + 1..=n {
                            let x = g[i][l][m].eval_base(&p.pos)?;
                            let y = g[i][m][l].eval_base(&p.pos)?;
                            if (x - y).abs() > tol {
                                return Ok(false);
                            }
                        }
                    }
                }
            }
            return Ok(true);
        }
        // velocity-derivative criterion
        let mut partials = vec![vec![Vec::new(); n + 1]; n + 1];
        for k in 1..=n {
            for i in 1..=n {
                partials[k][i] = (1..=n)
                    .map(|j| self.gamma[k][i].partial(Slot::Vel(j)))
                    .collect::<Vec<_>>();
            }
        }
        for p in probes {
            for k in 1..=n {
                for i in 1..=n {
                    for j in i + 1..=n {
                        let x = partials[k][i][j - 1].eval(&p.pos, &p.vel)?;
                        let y = partials[k][j][i - 1].eval(&p.pos, &p.vel)?;
                        if (x - y).abs() > tol {
                            return Ok(false);
                        }
                    }
                }
            }
        }
        Ok(true)
    }
}

/// The connection induced by a force law: `gamma^i_j = (1/2) d xi^i/d dq^j`,
/// `gamma^i_0 = xi^i - (1/2) dq^j d xi^i/d dq^j`. The result is symmetric by
/// construction; the affine form is populated when the force law carries a
/// quadratic form.
pub fn gamma_from_xi(xi: &DynamicEquation) -> DynamicConnection {
    let n = xi.dim();

    if let Some(q) = xi.quadratic_form() {
        // gamma^i_{jk} = a^i_jk, gamma^i_{j0} = gamma^i_{0j} = b^i_j / 2,
        // gamma^i_{00} = f^i
        let mut g = Vec::with_capacity(n);
        for i in 1..=n {
            let mut m = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
            m[0][0] = q.f[i].clone();
            for j in 1..=n {
                let half_b = q.b[i][j].scaled(0.5);
                m[0][j] = half_b.clone();
                m[j][0] = half_b;
                for k in 1..=n {
                    m[j][k] = q.a[i][j][k].clone();
                }
            }
            g.push(m);
        }
        return DynamicConnection::from_affine(n, g).expect("coefficients are well formed");
    }

    let mut rows = Vec::with_capacity(n);
    for i in 1..=n {
        let xi_i = xi.component(i);
        let partials: Vec<ScalarField> =
            (1..=n).map(|j| xi_i.partial(Slot::Vel(j))).collect();
        let mut gamma_0 = xi_i.clone();
        for (j, d) in partials.iter().enumerate() {
            gamma_0 = gamma_0.minus(&d.scaled(0.5).times_velocity(j + 1));
        }
        let mut row = vec![gamma_0];
        for d in &partials {
            row.push(d.scaled(0.5));
        }
        rows.push(row);
    }
    DynamicConnection::from_general(n, rows).expect("coefficients are well formed")
}

/// The force law induced by a connection: `xi^i = gamma^i_0 + dq^j gamma^i_j`.
pub fn xi_from_gamma(gamma: &DynamicConnection) -> DynamicEquation {
    let n = gamma.dim();
    let mut xi = vec![ScalarField::zero(n)];
    for i in 1..=n {
        let mut acc = gamma.coefficient(i, 0).clone();
        for j in 1..=n {
            acc = acc.plus(&gamma.coefficient(i, j).times_velocity(j));
        }
        xi.push(acc);
    }
    let quadratic = gamma.affine_coefficients().map(|g| {
        let mut a = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
        let mut b = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
        let mut f = vec![ScalarField::zero(n); n + 1];
        for i in 1..=n {
            f[i] = g[i][0][0].clone();
            for j in 1..=n {
                b[i][j] = g[i][0][j].plus(&g[i][j][0]);
                for k in 1..=n {
                    a[i][j][k] = g[i][j][k].plus(&g[i][k][j]).scaled(0.5);
                }
            }
        }
        QuadraticForm { a, b, f }
    });
    DynamicEquation::with_quadratic(n, xi, quadratic)
}

/// An observer field: velocity-independent components `Gamma^i(t, q)`.
#[derive(Debug, Clone)]
pub struct ReferenceFrame {
    n: usize,
    gamma: Vec<ScalarField>,
}

impl ReferenceFrame {
    pub fn new(n: usize, components: Vec<ScalarField>) -> Result<Self, GeometryError> {
        if components.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                found: components.len(),
                context: "reference frame components",
            });
        }
        crate::field::require_velocity_independent(&components)?;
        let mut gamma = vec![ScalarField::zero(n)];
        gamma.extend(components);
        Ok(ReferenceFrame { n, gamma })
    }

    pub fn rest(n: usize) -> ReferenceFrame {
        ReferenceFrame::new(n, vec![ScalarField::zero(n); n]).expect("zero frame is well formed")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.gamma[i]
    }

    /// Relative velocity `dq^i - Gamma^i` against this observer
    /// (slot 0 of the result is zero).
    pub fn covariant_differential(&self, jet: &JetPoint) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.n + 1];
        for i in 1..=self.n {
            out[i] = jet.vel.get(i).copied().unwrap_or(0.0) - self.gamma[i].eval_base(&jet.pos)?;
        }
        Ok(out)
    }
}

/// Promote an autonomous second-order equation on the typical fibre to a
/// time-dependent force law. The components must not mention `t`.
pub fn lift_conservative(
    n: usize,
    components: Vec<ScalarField>,
) -> Result<DynamicEquation, GeometryError> {
    if components.len() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: components.len(),
            context: "autonomous equation components",
        });
    }
    if components.iter().any(|f| f.depends_on_time()) {
        return Err(GeometryError::TimeDependent);
    }
    let mut eq = DynamicEquation::from_fields(n, components)?;
    eq.conservative = true;
    Ok(eq)
}

fn pad_vector(n: usize, fields: Vec<ScalarField>) -> Vec<ScalarField> {
    let mut out = vec![ScalarField::zero(n)];
    out.extend(fields);
    out
}

fn pad_square(n: usize, fields: Vec<Vec<ScalarField>>) -> Vec<Vec<ScalarField>> {
    let mut out = vec![vec![ScalarField::zero(n); n + 1]];
    for row in fields {
        out.push(pad_vector(n, row));
    }
    out
}

fn pad_cube(n: usize, fields: Vec<Vec<Vec<ScalarField>>>) -> Vec<Vec<Vec<ScalarField>>> {
    let mut out = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]];
    for m in fields {
        out.push(pad_square(n, m));
    }
    out
}
