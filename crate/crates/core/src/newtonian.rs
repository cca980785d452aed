//! Quadratic Lagrangian systems and the compatibility condition pairing a
//! force law with a mass metric.
//!
//! The Lagrangian `L = (1/2) m_ij dq^i dq^j + k_i dq^i + f` induces the
//! degenerate metric `g_00 = 2f, g_0i = k_i, g_ij = m_ij` on the extended
//! space. Its Euler-Lagrange equation is driven by all-lower-index symbols
//! with a leading minus sign,
//!
//! ```text
//! [lambda mu nu] = -(1/2)(d_lambda g_{mu nu} + d_nu g_{mu lambda} - d_mu g_{lambda nu}),
//! ```
//!
//! and the induced connection is `K_lambda^i_nu = (m^-1)^{ik} [lambda k nu]`,
//! whose constrained geodesics reproduce the Lagrange equation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{gamma_from_xi, DynamicEquation};
use crate::error::{EvalError, EvalErrorKind, GeometryError};
use crate::field::{Dependencies, JetPoint, ScalarField, Slot};
use crate::linalg;
use crate::connection::LinearConnection;
use crate::tensor::{ChartPoint, Tensor, Variance};

/// A Riemannian fibre metric: symmetric spatial matrix field `m_ij(t, q)`,
/// positive-definite where probed.
#[derive(Debug, Clone)]
pub struct MassMetric {
    n: usize,
    /// m[i][j], i, j = 1..=n (row/column 0 zero)
    m: Vec<Vec<ScalarField>>,
}

impl MassMetric {
    /// `components[i][j]` for `i, j = 0..n` (spatial only, `n x n`).
    pub fn new(n: usize, components: Vec<Vec<ScalarField>>) -> Result<Self, GeometryError> {
        if components.len() != n || components.iter().any(|row| row.len() != n) {
            return Err(GeometryError::Dimension {
                expected: n,
                found: components.len(),
                context: "mass metric components",
            });
        }
        for row in &components {
            crate::field::require_velocity_independent(row)?;
        }
        let mut m = vec![vec![ScalarField::zero(n); n + 1]];
        for row in components {
            let mut padded = vec![ScalarField::zero(n)];
            padded.extend(row);
            m.push(padded);
        }
        Ok(MassMetric { n, m })
    }

    pub fn identity(n: usize) -> MassMetric {
        let comps = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| ScalarField::constant(n, if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        MassMetric::new(n, comps).expect("identity metric is well formed")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn component(&self, i: usize, j: usize) -> &ScalarField {
        &self.m[i][j]
    }

    /// Spatial matrix values (row-major `n x n`).
    pub fn values_at(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                out[(i - 1) * n + (j - 1)] = self.m[i][j].eval_base(pos)?;
            }
        }
        Ok(out)
    }

    /// Inverse of the spatial matrix at a position.
    pub fn inverse_at(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        let vals = self.values_at(pos)?;
        linalg::invert(&vals, self.n)
            .ok_or_else(|| EvalError::new(EvalErrorKind::SingularMatrix, pos, &[]))
    }

    /// Check symmetry and positive-definiteness on the probes.
    pub fn validate(&self, positions: &[Vec<f64>]) -> Result<(), GeometryError> {
        for pos in positions {
            let vals = self.values_at(pos)?;
            if !linalg::is_positive_definite(&vals, self.n, 1e-9) {
                return Err(GeometryError::MassMetricNotPositive { pos: pos.clone() });
            }
        }
        Ok(())
    }
}

/// Coefficient fields of a non-degenerate quadratic Lagrangian.
#[derive(Debug, Clone)]
pub struct LagrangianCoefficients {
    pub mass: MassMetric,
    /// k[i], i = 1..=n (slot 0 zero)
    pub linear: Vec<ScalarField>,
    pub potential: ScalarField,
}

impl LagrangianCoefficients {
    pub fn new(
        mass: MassMetric,
        linear: Vec<ScalarField>,
        potential: ScalarField,
    ) -> Result<Self, GeometryError> {
        let n = mass.dim();
        if linear.len() != n {
            return Err(GeometryError::Dimension {
                expected: n,
                found: linear.len(),
                context: "linear Lagrangian coefficients",
            });
        }
        crate::field::require_velocity_independent(&linear)?;
        crate::field::require_velocity_independent(core::slice::from_ref(&potential))?;
        let mut padded = vec![ScalarField::zero(n)];
        padded.extend(linear);
        Ok(LagrangianCoefficients {
            mass,
            linear: padded,
            potential,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    /// Value of the Lagrangian at a jet point.
    pub fn eval(&self, jet: &JetPoint) -> Result<f64, EvalError> {
        let n = self.dim();
        let mut acc = self.potential.eval_base(&jet.pos)?;
        for i in 1..=n {
            let vi = jet.vel.get(i).copied().unwrap_or(0.0);
            acc += self.linear[i].eval_base(&jet.pos)? * vi;
            for j in 1..=n {
                let vj = jet.vel.get(j).copied().unwrap_or(0.0);
                acc += 0.5 * self.mass.component(i, j).eval_base(&jet.pos)? * vi * vj;
            }
        }
        Ok(acc)
    }
}

/// A symmetric `(n+1) x (n+1)` metric field on the extended space, possibly
/// degenerate. Carries the chart tag it was extended in, when built from a
/// mass metric.
#[derive(Debug, Clone)]
pub struct TangentMetric {
    n: usize,
    /// g[alpha][mu]
    g: Vec<Vec<ScalarField>>,
    chart: Option<String>,
}

impl TangentMetric {
    pub fn new(n: usize, g: Vec<Vec<ScalarField>>) -> Result<Self, GeometryError> {
        if g.len() != n + 1 || g.iter().any(|row| row.len() != n + 1) {
            return Err(GeometryError::Dimension {
                expected: n + 1,
                found: g.len(),
                context: "extended metric components",
            });
        }
        for row in &g {
            crate::field::require_velocity_independent(row)?;
        }
        Ok(TangentMetric { n, g, chart: None })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn chart(&self) -> Option<&str> {
        self.chart.as_deref()
    }

    pub fn component(&self, alpha: usize, mu: usize) -> &ScalarField {
        &self.g[alpha][mu]
    }

    /// Values as a rank-2 covariant tensor.
    pub fn values_at(&self, pos: &[f64]) -> Result<Tensor, EvalError> {
        let d = self.n + 1;
        let mut t = Tensor::zeros(d, vec![Variance::Covariant, Variance::Covariant]);
        for a in 0..d {
            for b in 0..d {
                t.set(&[a, b], self.g[a][b].eval_base(pos)?);
            }
        }
        Ok(t)
    }

    /// Positive-definiteness over probes (for extended Riemannian metrics).
    pub fn validate_positive_definite(&self, positions: &[Vec<f64>]) -> Result<(), GeometryError> {
        let d = self.n + 1;
        for pos in positions {
            let t = self.values_at(pos)?;
            let flat: Vec<f64> = (0..d * d)
                .map(|k| t.data()[k])
                .collect();
            if !linalg::is_positive_definite(&flat, d, 1e-9) {
                return Err(GeometryError::MassMetricNotPositive { pos: pos.clone() });
            }
        }
        Ok(())
    }
}

/// The possibly degenerate metric of a quadratic Lagrangian:
/// `g_00 = 2f, g_0i = k_i, g_ij = m_ij`.
pub fn metric_from_lagrangian(l: &LagrangianCoefficients) -> TangentMetric {
    let n = l.dim();
    let mut g = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
    g[0][0] = l.potential.scaled(2.0);
    for i in 1..=n {
        g[0][i] = l.linear[i].clone();
        g[i][0] = l.linear[i].clone();
        for j in 1..=n {
            g[i][j] = l.mass.component(i, j).clone();
        }
    }
    TangentMetric { n, g, chart: None }
}

/// Extend a mass metric to the Riemannian metric `g_00 = 1, g_0i = 0,
/// g_ij = m_ij`, tagged with the chart it was built in (the extension is
/// frame-dependent).
pub fn extend_mass_metric(mass: &MassMetric, chart: impl Into<String>) -> TangentMetric {
    let n = mass.dim();
    let mut g = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
    g[0][0] = ScalarField::constant(n, 1.0);
    for i in 1..=n {
        for j in 1..=n {
            g[i][j] = mass.component(i, j).clone();
        }
    }
    TangentMetric {
        n,
        g,
        chart: Some(chart.into()),
    }
}

/// All-lower-index symbols of a metric with the leading-minus convention
/// (see the module docs). Symmetric in the outer pair of lower indices.
pub(crate) struct ChristoffelField {
    n: usize,
    /// dg[lambda][mu][nu] = d_lambda g_{mu nu}
    dg: Vec<Vec<Vec<ScalarField>>>,
}

impl ChristoffelField {
    pub(crate) fn new(g: &TangentMetric) -> ChristoffelField {
        let n = g.dim();
        let dg = (0..=n)
            .map(|l| {
                (0..=n)
                    .map(|mu| {
                        (0..=n)
                            .map(|nu| g.component(mu, nu).partial(Slot::Pos(l)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ChristoffelField { n, dg }
    }

    /// Flattened `[lambda][mu][nu]` values at a position.
    pub(crate) fn values_at(&self, pos: &[f64]) -> Result<Vec<f64>, EvalError> {
        let d = self.n + 1;
        let mut dg = vec![0.0; d * d * d];
        for l in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    dg[(l * d + mu) * d + nu] = self.dg[l][mu][nu].eval_base(pos)?;
                }
            }
        }
        let mut out = vec![0.0; d * d * d];
        for l in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    out[(l * d + mu) * d + nu] = -0.5
                        * (dg[(l * d + mu) * d + nu] + dg[(nu * d + mu) * d + l]
                            - dg[(mu * d + l) * d + nu]);
                }
            }
        }
        Ok(out)
    }
}

/// All-lower-index symbols at a point, as a rank-3 covariant tensor.
pub fn christoffel(g: &TangentMetric, p: &ChartPoint) -> Result<Tensor, GeometryError> {
    if p.dim() != g.dim() {
        return Err(GeometryError::Dimension {
            expected: g.dim(),
            found: p.dim(),
            context: "chart point dimension",
        });
    }
    let field = ChristoffelField::new(g);
    let vals = field.values_at(p.coords())?;
    let d = g.dim() + 1;
    let mut t = Tensor::zeros(
        d,
        vec![Variance::Covariant, Variance::Covariant, Variance::Covariant],
    );
    for l in 0..d {
        for mu in 0..d {
            for nu in 0..d {
                t.set(&[l, mu, nu], vals[(l * d + mu) * d + nu]);
            }
        }
    }
    Ok(t)
}

/// The linear connection of a quadratic Lagrangian:
/// `K_lambda^i_nu = (m^-1)^{ik} [lambda k nu]`, temporal-upper row zero.
/// Its constrained geodesics integrate the Euler-Lagrange equation.
pub fn lagrangian_connection(
    l: &LagrangianCoefficients,
) -> Result<LinearConnection, GeometryError> {
    let n = l.dim();
    let metric = metric_from_lagrangian(l);
    let chr = alloc::sync::Arc::new(ChristoffelField::new(&metric));
    let mass = l.mass.clone();

    let mut comp = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
    for (lambda, mat) in comp.iter_mut().enumerate() {
        for (i, row) in mat.iter_mut().enumerate().skip(1) {
            for (nu, slot) in row.iter_mut().enumerate() {
                let chr = alloc::sync::Arc::clone(&chr);
                let mass = mass.clone();
                *slot = ScalarField::function(n, Dependencies::BASE, move |pos, _| {
                    let d = mass.dim() + 1;
                    let sym = chr.values_at(pos)?;
                    let minv = mass.inverse_at(pos)?;
                    let mut acc = 0.0;
                    for k in 1..=mass.dim() {
                        acc += minv[(i - 1) * mass.dim() + (k - 1)]
                            * sym[(lambda * d + k) * d + nu];
                    }
                    Ok(acc)
                });
            }
        }
    }
    LinearConnection::new(n, comp)
}

/// Acceleration of the Euler-Lagrange equation evaluated directly from the
/// metric symbols: `xi^i = (m^-1)^{ik} [lambda k nu] v^lambda v^nu` on the
/// jet slice. This is the independent route used to cross-check the
/// connection-based geodesics.
pub fn lagrange_acceleration(
    l: &LagrangianCoefficients,
    pos: &[f64],
    vel: &[f64],
) -> Result<Vec<f64>, EvalError> {
    let n = l.dim();
    let d = n + 1;
    let metric = metric_from_lagrangian(l);
    let chr = ChristoffelField::new(&metric);
    let sym = chr.values_at(pos)?;
    let minv = l.mass.inverse_at(pos)?;
    let mut out = vec![0.0; d];
    for i in 1..=n {
        let mut acc = 0.0;
        for lambda in 0..=n {
            let vl = vel.get(lambda).copied().unwrap_or(0.0);
            if vl == 0.0 {
                continue;
            }
            for nu in 0..=n {
                let vn = vel.get(nu).copied().unwrap_or(0.0);
                if vn == 0.0 {
                    continue;
                }
                for k in 1..=n {
                    acc += minv[(i - 1) * n + (k - 1)] * sym[(lambda * d + k) * d + nu] * vl * vn;
                }
            }
        }
        out[i] = acc;
    }
    Ok(out)
}

/// The force law of a quadratic Lagrangian as a quadratic dynamic equation:
/// coefficients `a^i_jk = (m^-1)^{im} [j m k]`, `b^i_j = (m^-1)^{im}
/// ([0 m j] + [j m 0])`, `f^i = (m^-1)^{im} [0 m 0]`.
pub fn lagrangian_force_law(l: &LagrangianCoefficients) -> Result<DynamicEquation, GeometryError> {
    let n = l.dim();
    let metric = metric_from_lagrangian(l);
    let chr = alloc::sync::Arc::new(ChristoffelField::new(&metric));
    let mass = l.mass.clone();

    let coeff = |lambda: usize, nu: usize, i: usize| -> ScalarField {
        let chr = alloc::sync::Arc::clone(&chr);
        let mass = mass.clone();
        ScalarField::function(n, Dependencies::BASE, move |pos, _| {
            let d = mass.dim() + 1;
            let sym = chr.values_at(pos)?;
            let minv = mass.inverse_at(pos)?;
            let mut acc = 0.0;
            for m in 1..=mass.dim() {
                acc += minv[(i - 1) * mass.dim() + (m - 1)] * sym[(lambda * d + m) * d + nu];
            }
            Ok(acc)
        })
    };

    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for i in 1..=n {
        f.push(coeff(0, 0, i));
        let mut bi = Vec::with_capacity(n);
        let mut ai = Vec::with_capacity(n);
        for j in 1..=n {
            bi.push(coeff(0, j, i).plus(&coeff(j, 0, i)));
            let mut row = Vec::with_capacity(n);
            for k in 1..=n {
                // already symmetric in (j, k); averaged for exactness
                row.push(coeff(j, k, i).plus(&coeff(k, j, i)).scaled(0.5));
            }
            ai.push(row);
        }
        a.push(ai);
        b.push(bi);
    }
    let probe = [JetPoint::new(0.0, &vec![0.0; n], &vec![0.0; n])];
    DynamicEquation::quadratic(n, a, b, f, &probe)
}

/// Largest violation of the compatibility condition pairing a force law with
/// a mass metric:
///
/// ```text
/// r_ij = d_0 m_ij + dq^k d_k m_ij + m_ik gamma^k_j + m_jk gamma^k_i
/// ```
///
/// with `gamma` the connection induced by the force law. A vanishing
/// residual certifies the pair as a Newtonian system.
pub fn compatibility_residual(
    xi: &DynamicEquation,
    mass: &MassMetric,
    probes: &[JetPoint],
) -> Result<f64, GeometryError> {
    let n = xi.dim();
    if mass.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: mass.dim(),
            context: "mass metric dimension",
        });
    }
    let gamma = gamma_from_xi(xi);
    // partials of the mass metric
    let mut dm = vec![vec![Vec::new(); n + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=n {
            dm[i][j] = (0..=n)
                .map(|l| mass.component(i, j).partial(Slot::Pos(l)))
                .collect::<Vec<_>>();
        }
    }
    let mut worst = 0.0f64;
    for p in probes {
        // gamma^k_j values on the jet
        let mut gv = vec![vec![0.0; n + 1]; n + 1];
        for k in 1..=n {
            for j in 1..=n {
                gv[k][j] = gamma.coefficient(k, j).eval(&p.pos, &p.vel)?;
            }
        }
        let mut mv = vec![vec![0.0; n + 1]; n + 1];
        for i in 1..=n {
            for k in 1..=n {
                mv[i][k] = mass.component(i, k).eval_base(&p.pos)?;
            }
        }
        for i in 1..=n {
            for j in i..=n {
                let mut r = dm[i][j][0].eval_base(&p.pos)?;
                for k in 1..=n {
                    let vk = p.vel.get(k).copied().unwrap_or(0.0);
                    r += vk * dm[i][j][k].eval_base(&p.pos)?;
                    r += mv[i][k] * gv[k][j] + mv[j][k] * gv[k][i];
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolTable};
    use crate::field::Region;

    fn field(text: &str, n: usize) -> ScalarField {
        ScalarField::from_expr(n, parse(text, n, &SymbolTable::new()).unwrap())
    }

    fn probes(n: usize) -> Vec<JetPoint> {
        Region::unit(n).jet_lattice(3)
    }

    fn positions(n: usize) -> Vec<Vec<f64>> {
        Region::unit(n).position_lattice(3)
    }

    /// `L = (1/2) dq1^2 - k q1^2 / 2` (oscillator with unit mass).
    fn oscillator(k: f64) -> LagrangianCoefficients {
        let mut tbl = SymbolTable::new();
        tbl.insert("k", k);
        LagrangianCoefficients::new(
            MassMetric::identity(1),
            vec![ScalarField::zero(1)],
            ScalarField::from_expr(1, parse("-k*q1^2/2", 1, &tbl).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn metric_of_unit_mass_potential_system() {
        let g = metric_from_lagrangian(&oscillator(1.0));
        let pos = [0.0, 2.0];
        // g_00 = 2f = -q1^2, g_11 = 1, g_01 = 0
        assert!((g.component(0, 0).eval_base(&pos).unwrap() + 4.0).abs() < 1e-15);
        assert_eq!(g.component(1, 1).eval_base(&pos).unwrap(), 1.0);
        assert_eq!(g.component(0, 1).eval_base(&pos).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_metric_for_free_lagrangian() {
        let l = LagrangianCoefficients::new(
            MassMetric::identity(2),
            vec![ScalarField::zero(2); 2],
            ScalarField::zero(2),
        )
        .unwrap();
        let g = metric_from_lagrangian(&l);
        let t = g.values_at(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.get(&[0, 0]), 0.0);
        assert_eq!(t.get(&[1, 1]), 1.0);
        assert_eq!(t.get(&[2, 2]), 1.0);
    }

    #[test]
    fn linear_coefficient_enters_mixed_slots() {
        let l = LagrangianCoefficients::new(
            MassMetric::identity(1),
            vec![field("0.4", 1)],
            ScalarField::zero(1),
        )
        .unwrap();
        let g = metric_from_lagrangian(&l);
        let pos = [0.0, 1.0];
        assert_eq!(g.component(0, 1).eval_base(&pos).unwrap(), 0.4);
        assert_eq!(g.component(1, 0).eval_base(&pos).unwrap(), 0.4);
    }

    #[test]
    fn oscillator_symbols() {
        let g = metric_from_lagrangian(&oscillator(1.0));
        let p = ChartPoint::from_time_and_space(0.0, &[3.0]).unwrap();
        let t = christoffel(&g, &p).unwrap();
        // [0 1 0] = (1/2) d_1 g_00 = -k q1
        assert!((t.get(&[0, 1, 0]) + 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_metric_has_zero_symbols() {
        let l = LagrangianCoefficients::new(
            MassMetric::identity(2),
            vec![field("0.3", 2), field("-0.1", 2)],
            field("2", 2),
        )
        .unwrap();
        let g = metric_from_lagrangian(&l);
        let p = ChartPoint::from_time_and_space(0.5, &[1.0, -1.0]).unwrap();
        assert!(christoffel(&g, &p).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn symbols_symmetric_in_outer_indices() {
        let mass = MassMetric::new(
            2,
            vec![
                vec![field("1 + 0.2*q1^2", 2), field("0.1*q2", 2)],
                vec![field("0.1*q2", 2), field("2 + 0.1*q1", 2)],
            ],
        )
        .unwrap();
        let l = LagrangianCoefficients::new(
            mass,
            vec![field("0.2*q2", 2), field("0", 2)],
            field("-q1^2 - q2^2", 2),
        )
        .unwrap();
        let g = metric_from_lagrangian(&l);
        for pos in positions(2) {
            let p = ChartPoint::new(pos).unwrap();
            let t = christoffel(&g, &p).unwrap();
            for l in 0..=2 {
                for mu in 0..=2 {
                    for nu in 0..=2 {
                        assert!(
                            (t.get(&[l, mu, nu]) - t.get(&[nu, mu, l])).abs() < 1e-9,
                            "outer symmetry at ({l},{mu},{nu})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn oscillator_connection_component() {
        let k = lagrangian_connection(&oscillator(1.0)).unwrap();
        let pos = [0.0, 0.7];
        assert!((k.component(0, 1, 0).eval_base(&pos).unwrap() + 0.7).abs() < 1e-9);
        assert!(k.component(1, 1, 1).eval_base(&pos).unwrap().abs() < 1e-9);
        assert!(k.is_tilde());
    }

    #[test]
    fn free_lagrangian_connection_vanishes() {
        let l = LagrangianCoefficients::new(
            MassMetric::identity(1),
            vec![ScalarField::zero(1)],
            ScalarField::zero(1),
        )
        .unwrap();
        let k = lagrangian_connection(&l).unwrap();
        for pos in positions(1) {
            assert!(k.components_at(&pos).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn heavier_mass_scales_connection_down() {
        let mass = MassMetric::new(1, vec![vec![field("2", 1)]]).unwrap();
        let l = LagrangianCoefficients::new(
            mass,
            vec![ScalarField::zero(1)],
            field("-q1^2/2", 1),
        )
        .unwrap();
        let k = lagrangian_connection(&l).unwrap();
        let pos = [0.0, 1.0];
        // K_0^1_0 = -d_1 phi / m = -q1 / 2
        assert!((k.component(0, 1, 0).eval_base(&pos).unwrap() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn lagrangian_systems_satisfy_compatibility() {
        let mass = MassMetric::new(
            2,
            vec![
                vec![field("1 + 0.3*q1^2", 2), field("0.2*q1*q2", 2)],
                vec![field("0.2*q1*q2", 2), field("1.5", 2)],
            ],
        )
        .unwrap();
        let l = LagrangianCoefficients::new(
            mass.clone(),
            vec![field("0.1*q2", 2), field("-0.2*q1", 2)],
            field("-0.5*(q1^2 + q2^2)", 2),
        )
        .unwrap();
        // the force law: invert m against the symbols on the jet slice
        let n = 2;
        let l2 = l.clone();
        let comps: Vec<ScalarField> = (1..=n)
            .map(|i| {
                let l2 = l2.clone();
                ScalarField::function(n, Dependencies::JET, move |pos, vel| {
                    let mut v = vel.to_vec();
                    if v.is_empty() {
                        v.push(1.0);
                    } else {
                        v[0] = 1.0;
                    }
                    Ok(lagrange_acceleration(&l2, pos, &v)?[i])
                })
            })
            .collect();
        let xi = DynamicEquation::from_fields(n, comps).unwrap();
        let r = compatibility_residual(&xi, &mass, &probes(2)).unwrap();
        assert!(r < 1e-7, "residual {r}");
    }

    #[test]
    fn gyroscopic_coupling_is_compatible_with_constant_mass() {
        // xi = antisymmetric b against the identity mass
        let xi = DynamicEquation::from_fields(
            2,
            vec![field("2*dq2", 2), field("-2*dq1", 2)],
        )
        .unwrap();
        let r = compatibility_residual(&xi, &MassMetric::identity(2), &probes(2)).unwrap();
        assert!(r < 1e-10, "residual {r}");
    }

    #[test]
    fn perturbed_mass_breaks_compatibility() {
        // oscillator force law left unchanged while m = 1 + eps q1
        let xi = DynamicEquation::from_fields(1, vec![field("-q1", 1)]).unwrap();
        let mass = MassMetric::new(1, vec![vec![field("1 + 0.1*q1", 1)]]).unwrap();
        let probe = [JetPoint::new(0.0, &[0.5], &[1.0])];
        let r = compatibility_residual(&xi, &mass, &probe).unwrap();
        assert!((r - 0.1).abs() < 1e-12, "residual {r} should be |dq1 * eps|");
    }

    #[test]
    fn extended_metric_is_riemannian() {
        let m = MassMetric::new(
            2,
            vec![
                vec![field("2", 2), field("0", 2)],
                vec![field("0", 2), field("3", 2)],
            ],
        )
        .unwrap();
        let g = extend_mass_metric(&m, "lab");
        assert_eq!(g.chart(), Some("lab"));
        let t = g.values_at(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.get(&[0, 0]), 1.0);
        assert_eq!(t.get(&[0, 1]), 0.0);
        assert_eq!(t.get(&[1, 1]), 2.0);
        assert_eq!(t.get(&[2, 2]), 3.0);
        g.validate_positive_definite(&positions(2)).unwrap();
    }

    #[test]
    fn unit_mass_extension() {
        let g = extend_mass_metric(&MassMetric::identity(1), "lab");
        let t = g.values_at(&[0.3, 0.5]).unwrap();
        assert_eq!(t.get(&[0, 0]), 1.0);
        assert_eq!(t.get(&[1, 1]), 1.0);
    }

    #[test]
    fn mass_metric_validation_rejects_indefinite() {
        let bad = MassMetric::new(1, vec![vec![field("-1", 1)]]).unwrap();
        assert!(bad.validate(&positions(1)).is_err());
        MassMetric::identity(3).validate(&positions(3)).unwrap();
    }
}
