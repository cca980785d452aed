//! Connections on the tangent bundle whose constrained geodesics (temporal
//! velocity held at 1) realise second-order force laws.
//!
//! A linear connection stores velocity-independent component fields
//! `K[lambda][alpha][beta]` and drives the geodesic equation
//! `q''^alpha = K_lambda^alpha_beta q'^lambda q'^beta`; a general connection
//! stores components `K^alpha_lambda(q, q')` and drives
//! `q''^alpha = K^alpha_lambda q'^lambda`. Connections with vanishing
//! temporal components (`K^0 = 0`) keep `q'^0 = 1` invariant and are flagged
//! `tilde`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::chart::FrameMap;
use crate::dynamics::{
    xi_from_gamma, DynamicConnection, DynamicEquation, QuadraticForm, ReferenceFrame,
};
use crate::error::{EvalError, GeometryError};
use crate::expr::Expr;
use crate::field::{Dependencies, JetPoint, ScalarField, Slot};
use crate::tensor::{Tensor, Variance};

static CONNECTION_IDS: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    CONNECTION_IDS.fetch_add(1, Ordering::Relaxed)
}

/// Default probe tolerance for flatness tests.
pub const DEFAULT_FLATNESS_TOL: f64 = 1e-8;

/// A linear connection: `K^alpha_lambda = K[lambda][alpha][beta] q'^beta`
/// with velocity-independent component fields.
#[derive(Debug, Clone)]
pub struct LinearConnection {
    n: usize,
    /// k[lambda][alpha][beta], each a field of `(t, q)`.
    k: Vec<Vec<Vec<ScalarField>>>,
    tilde: bool,
    id: u64,
}

impl LinearConnection {
    /// `components[lambda][alpha][beta]` sized `(n+1)^3`.
    ///
    /// The tilde flag is structural: the `alpha = 0` row counts as vanishing
    /// only when its fields are literal zero constants.
    pub fn new(n: usize, components: Vec<Vec<Vec<ScalarField>>>) -> Result<Self, GeometryError> {
        if components.len() != n + 1
            || components
                .iter()
                .any(|m| m.len() != n + 1 || m.iter().any(|row| row.len() != n + 1))
        {
            return Err(GeometryError::Dimension {
                expected: n + 1,
                found: components.len(),
                context: "linear connection component array",
            });
        }
        for m in &components {
            for row in m {
                crate::field::require_velocity_independent(row)?;
            }
        }
        let tilde = components
            .iter()
            .all(|m| m[0].iter().all(|f| f.is_zero_const()));
        Ok(LinearConnection {
            n,
            k: components,
            tilde,
            id: next_id(),
        })
    }

    pub fn zero(n: usize) -> LinearConnection {
        let z = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
        LinearConnection::new(n, z).expect("zero connection is well formed")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_tilde(&self) -> bool {
        self.tilde
    }

    pub fn component(&self, lambda: usize, alpha: usize, beta: usize) -> &ScalarField {
        &self.k[lambda][alpha][beta]
    }

    /// All components at a position, as a rank-3 tensor
    /// `K[lambda][alpha][beta]` (lower, upper, lower).
    pub fn components_at(&self, pos: &[f64]) -> Result<Tensor, EvalError> {
        let d = self.n + 1;
        let mut t = Tensor::zeros(
            d,
            vec![
                Variance::Covariant,
                Variance::Contravariant,
                Variance::Covariant,
            ],
        );
        for l in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let v = self.k[l][a][b].eval_base(pos)?;
                    t.set(&[l, a, b], v);
                }
            }
        }
        Ok(t)
    }

    /// Largest deviation from `K_lambda^alpha_mu = K_mu^alpha_lambda` over
    /// the probes.
    pub fn asymmetry(&self, positions: &[Vec<f64>]) -> Result<f64, EvalError> {
        let mut worst = 0.0f64;
        for pos in positions {
            for l in 0..=self.n {
                for a in 0..=self.n {
                    for b in l + 1..=self.n {
                        let x = self.k[l][a][b].eval_base(pos)?;
                        let y = self.k[b][a][l].eval_base(pos)?;
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Geodesic acceleration `K_lambda^alpha_beta v^lambda v^beta`.
    pub fn acceleration(&self, pos: &[f64], vel: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.n + 1];
        for a in 0..=self.n {
            let mut acc = 0.0;
            for l in 0..=self.n {
                let vl = vel.get(l).copied().unwrap_or(0.0);
                if vl == 0.0 {
                    continue;
                }
                for b in 0..=self.n {
                    let vb = vel.get(b).copied().unwrap_or(0.0);
                    if vb == 0.0 {
                        continue;
                    }
                    acc += self.k[l][a][b].eval_base(pos)? * vl * vb;
                }
            }
            out[a] = acc;
        }
        Ok(out)
    }
}

/// A connection with general velocity dependence: components
/// `K^alpha_lambda(q, q')` stored as jet fields (`vel[0]` is the temporal
/// velocity).
#[derive(Clone)]
pub struct GeneralConnection {
    n: usize,
    /// comp[alpha][lambda]
    comp: Vec<Vec<ScalarField>>,
    tilde: bool,
    id: u64,
}

impl core::fmt::Debug for GeneralConnection {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GeneralConnection")
            .field("n", &self.n)
            .field("tilde", &self.tilde)
            .finish()
    }
}

impl GeneralConnection {
    pub fn new(n: usize, comp: Vec<Vec<ScalarField>>) -> Result<Self, GeometryError> {
        if comp.len() != n + 1 || comp.iter().any(|row| row.len() != n + 1) {
            return Err(GeometryError::Dimension {
                expected: n + 1,
                found: comp.len(),
                context: "general connection component array",
            });
        }
        let tilde = comp[0].iter().all(|f| f.is_zero_const());
        Ok(GeneralConnection {
            n,
            comp,
            tilde,
            id: next_id(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_tilde(&self) -> bool {
        self.tilde
    }

    pub fn component(&self, alpha: usize, lambda: usize) -> &ScalarField {
        &self.comp[alpha][lambda]
    }

    /// Geodesic acceleration `K^alpha_lambda v^lambda`.
    pub fn acceleration(&self, pos: &[f64], vel: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.n + 1];
        for a in 0..=self.n {
            let mut acc = 0.0;
            for l in 0..=self.n {
                let vl = vel.get(l).copied().unwrap_or(0.0);
                if vl == 0.0 {
                    continue;
                }
                acc += self.comp[a][l].eval(pos, vel)? * vl;
            }
            out[a] = acc;
        }
        Ok(out)
    }
}

/// Either flavour of tangent-bundle connection.
#[derive(Debug, Clone)]
pub enum TangentConnection {
    Linear(LinearConnection),
    General(GeneralConnection),
}

impl TangentConnection {
    pub fn dim(&self) -> usize {
        match self {
            TangentConnection::Linear(k) => k.dim(),
            TangentConnection::General(k) => k.dim(),
        }
    }

    pub fn id(&self) -> u64 {
        match self {
            TangentConnection::Linear(k) => k.id(),
            TangentConnection::General(k) => k.id(),
        }
    }

    pub fn is_tilde(&self) -> bool {
        match self {
            TangentConnection::Linear(k) => k.is_tilde(),
            TangentConnection::General(k) => k.is_tilde(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearConnection> {
        match self {
            TangentConnection::Linear(k) => Some(k),
            TangentConnection::General(_) => None,
        }
    }

    pub fn acceleration(&self, pos: &[f64], vel: &[f64]) -> Result<Vec<f64>, EvalError> {
        match self {
            TangentConnection::Linear(k) => k.acceleration(pos, vel),
            TangentConnection::General(k) => k.acceleration(pos, vel),
        }
    }
}

/// The symmetric linear connection of a quadratic force law:
///
/// ```text
/// K_0^i_0 = f^i,  K_0^i_j = K_j^i_0 = b^i_j / 2,  K_j^i_k = a^i_jk,
/// ```
///
/// all temporal-upper components zero. `a` must be symmetric in its lower
/// pair (checked on the probes).
pub fn linear_from_quadratic(
    n: usize,
    a: &[Vec<Vec<ScalarField>>],
    b: &[Vec<ScalarField>],
    f: &[ScalarField],
    probes: &[JetPoint],
) -> Result<LinearConnection, GeometryError> {
    let xi = DynamicEquation::quadratic(n, a.to_vec(), b.to_vec(), f.to_vec(), probes)?;
    linear_from_quadratic_form(xi.quadratic_form().expect("constructed quadratic"))
}

/// Same construction, from an already validated quadratic form (padded
/// arrays).
pub fn linear_from_quadratic_form(
    form: &QuadraticForm,
) -> Result<LinearConnection, GeometryError> {
    let n = form.f.len() - 1;
    let mut k = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
    for i in 1..=n {
        k[0][i][0] = form.f[i].clone();
        for j in 1..=n {
            let half_b = form.b[i][j].scaled(0.5);
            k[0][i][j] = half_b.clone();
            k[j][i][0] = half_b;
            for m in 1..=n {
                k[j][i][m] = form.a[i][j][m].clone();
            }
        }
    }
    LinearConnection::new(n, k)
}

/// The force law a connection induces relative to a reference frame:
/// `xi^i = (K^i_lambda - Gamma^i K^0_lambda) v^lambda` on the jet slice
/// `v^0 = 1`. For tilde connections the frame drops out.
pub fn xi_from_connection(
    k: &TangentConnection,
    frame: &ReferenceFrame,
) -> Result<DynamicEquation, GeometryError> {
    let n = k.dim();
    if frame.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: frame.dim(),
            context: "reference frame dimension",
        });
    }
    match k {
        TangentConnection::Linear(lin) => {
            // quadratic coefficients, with the frame correction applied to
            // each velocity degree
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            let mut f = Vec::with_capacity(n);
            for i in 1..=n {
                let g = frame.component(i);
                f.push(
                    lin.component(0, i, 0)
                        .minus(&g.times(lin.component(0, 0, 0))),
                );
                let mut bi = Vec::with_capacity(n);
                let mut ai = Vec::with_capacity(n);
                for j in 1..=n {
                    let bij = lin
                        .component(0, i, j)
                        .plus(lin.component(j, i, 0))
                        .minus(&g.times(&lin.component(0, 0, j).plus(lin.component(j, 0, 0))));
                    bi.push(bij);
                    let mut row = Vec::with_capacity(n);
                    for m in 1..=n {
                        let sym = lin
                            .component(j, i, m)
                            .plus(lin.component(m, i, j))
                            .scaled(0.5);
                        let corr = lin
                            .component(j, 0, m)
                            .plus(lin.component(m, 0, j))
                            .scaled(0.5);
                        row.push(sym.minus(&g.times(&corr)));
                    }
                    ai.push(row);
                }
                a.push(ai);
                b.push(bi);
            }
            let probes = [JetPoint::new(0.0, &vec![0.0; n], &vec![0.0; n])];
            Ok(DynamicEquation::quadratic(n, a, b, f, &probes)?)
        }
        TangentConnection::General(gen) => {
            let mut fields = Vec::with_capacity(n);
            for i in 1..=n {
                let gen = gen.clone();
                let g = frame.component(i).clone();
                let deps = Dependencies::JET;
                fields.push(ScalarField::function(n, deps, move |pos, vel| {
                    // jet slice: temporal velocity 1
                    let mut v = vel.to_vec();
                    if v.is_empty() {
                        v.push(1.0);
                    } else {
                        v[0] = 1.0;
                    }
                    let mut acc = 0.0;
                    let gi = g.eval_base(pos)?;
                    for l in 0..v.len().min(gen.dim() + 1) {
                        let vl = v[l];
                        if vl == 0.0 {
                            continue;
                        }
                        let ki = gen.component(i, l).eval(pos, &v)?;
                        let k0 = gen.component(0, l).eval(pos, &v)?;
                        acc += (ki - gi * k0) * vl;
                    }
                    Ok(acc)
                }));
            }
            Ok(DynamicEquation::from_fields(n, fields)?)
        }
    }
}

/// The linear connection corresponding one-to-one to an affine connection on
/// the velocity phase space: `K[mu][i][lambda] = gamma^i_{mu lambda}`,
/// temporal-upper row zero. Rejected when `gamma` has no affine form (the
/// extension exists but is not unique, so none is chosen silently).
pub fn connection_from_gamma(
    gamma: &DynamicConnection,
) -> Result<LinearConnection, GeometryError> {
    let g = gamma.affine_coefficients().ok_or(GeometryError::NonAffine)?;
    let n = gamma.dim();
    let mut k = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
    for i in 1..=n {
        for mu in 0..=n {
            for lambda in 0..=n {
                k[mu][i][lambda] = g[i][mu][lambda].clone();
            }
        }
    }
    LinearConnection::new(n, k)
}

/// The fibre-linear deformation that leaves constrained geodesics unchanged.
///
/// Components on the deformed connection:
/// `sigma^0_lambda = 0`, `sigma^i_k = h^i_k + (s - 1) h^i_k v^0`,
/// `sigma^i_0 = -s h^i_k v^k - h^i_0 v^0 + h^i_0`.
#[derive(Debug, Clone)]
pub struct SolderingForm {
    n: usize,
    s: ScalarField,
    /// h[i][lambda], i = 1..=n, lambda = 0..=n
    h: Vec<Vec<ScalarField>>,
}

impl SolderingForm {
    pub fn new(
        n: usize,
        s: ScalarField,
        h: Vec<Vec<ScalarField>>,
    ) -> Result<Self, GeometryError> {
        if h.len() != n || h.iter().any(|row| row.len() != n + 1) {
            return Err(GeometryError::Dimension {
                expected: n,
                found: h.len(),
                context: "soldering coefficient rows",
            });
        }
        if s.depends_on_velocities() || h.iter().any(|row| row.iter().any(|f| f.depends_on_velocities())) {
            return Err(GeometryError::VelocityDependent);
        }
        let mut padded = vec![vec![ScalarField::zero(n); n + 1]];
        padded.extend(h);
        Ok(SolderingForm { n, s, h: padded })
    }

    pub fn zero(n: usize) -> SolderingForm {
        SolderingForm::new(n, ScalarField::zero(n), vec![vec![ScalarField::zero(n); n + 1]; n])
            .expect("zero soldering form is well formed")
    }

    /// Component `sigma^i_lambda` at a tangent point.
    fn component(&self, i: usize, lambda: usize, pos: &[f64], vel: &[f64]) -> Result<f64, EvalError> {
        let v0 = vel.first().copied().unwrap_or(1.0);
        let s = self.s.eval_base(pos)?;
        if lambda == 0 {
            let mut acc = 0.0;
            for k in 1..=self.n {
                acc -= s * self.h[i][k].eval_base(pos)? * vel.get(k).copied().unwrap_or(0.0);
            }
            let h0 = self.h[i][0].eval_base(pos)?;
            Ok(acc - h0 * v0 + h0)
        } else {
            let hk = self.h[i][lambda].eval_base(pos)?;
            Ok(hk + (s - 1.0) * hk * v0)
        }
    }
}

/// Deform a tilde connection by a soldering form. The result is a general
/// connection with the same constrained geodesics.
pub fn apply_soldering(
    k: &TangentConnection,
    sigma: &SolderingForm,
) -> Result<GeneralConnection, GeometryError> {
    if !k.is_tilde() {
        return Err(GeometryError::NotTilde);
    }
    let n = k.dim();
    if sigma.n != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: sigma.n,
            context: "soldering form dimension",
        });
    }
    let mut comp = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
    for (i, row) in comp.iter_mut().enumerate().skip(1) {
        for (lambda, slot) in row.iter_mut().enumerate() {
            let base = k.clone();
            let sig = sigma.clone();
            *slot = ScalarField::function(n, Dependencies::JET, move |pos, vel| {
                let k_val = match &base {
                    TangentConnection::Linear(lin) => {
                        let mut acc = 0.0;
                        for b in 0..=lin.dim() {
                            let vb = vel.get(b).copied().unwrap_or(0.0);
                            if vb != 0.0 {
                                acc += lin.component(lambda, i, b).eval_base(pos)? * vb;
                            }
                        }
                        acc
                    }
                    TangentConnection::General(g) => g.component(i, lambda).eval(pos, vel)?,
                };
                Ok(k_val + sig.component(i, lambda, pos, vel)?)
            });
        }
    }
    GeneralConnection::new(n, comp)
}

/// Transform a tilde connection into a new chart:
/// `K'^i_lambda = (d_j q'^i K^j_mu + d_mu v'^i) dq^mu/dq'^lambda`, with the
/// inverse-Jacobian factors taken from the frame map's declared inverse.
///
/// Linear connections stay linear (for expression-backed data the
/// transformed components are built in closed form; otherwise they are
/// extracted against basis velocities). General connections stay general.
pub fn transform_connection(
    k: &TangentConnection,
    frame: &FrameMap,
) -> Result<TangentConnection, GeometryError> {
    if !k.is_tilde() {
        return Err(GeometryError::NotTilde);
    }
    let n = k.dim();
    if frame.dim() != n {
        return Err(GeometryError::Dimension {
            expected: n,
            found: frame.dim(),
            context: "frame map dimension",
        });
    }

    if let TangentConnection::Linear(lin) = k {
        if let Some(sym) = symbolic_linear_transform(lin, frame) {
            return Ok(TangentConnection::Linear(sym?));
        }
    }

    let warned = Arc::new(AtomicBool::new(false));

    // Evaluate K'^i_lambda at a new-chart tangent point.
    let eval_transformed = {
        let k = k.clone();
        let frame = frame.clone();
        let warned = Arc::clone(&warned);
        move |i: usize, lambda: usize, pos_new: &[f64], vel_new: &[f64]| -> Result<f64, EvalError> {
            let pos = frame.inverse_pos(pos_new)?;
            let vel = frame.pull_velocity(pos_new, vel_new)?;
            let jinv = frame.inverse_jacobian(pos_new)?;
            if !warned.swap(true, Ordering::Relaxed) {
                if let Ok(dev) = frame.jacobian_consistency(pos_new) {
                    if dev > 1e-7 {
                        log::warn!(
                            "frame map inverse Jacobian deviates from the inverted forward Jacobian by {dev:.3e}"
                        );
                    }
                }
            }
            let d = n + 1;
            let mut acc = 0.0;
            for mu in 0..=n {
                let jfac = jinv[mu * d + lambda];
                if jfac == 0.0 {
                    continue;
                }
                // d_j q'^i K^j_mu
                let mut bracket = 0.0;
                for j in 1..=n {
                    let kjmu = match &k {
                        TangentConnection::Linear(lin) => {
                            let mut s = 0.0;
                            for b in 0..=n {
                                let vb = vel.get(b).copied().unwrap_or(0.0);
                                if vb != 0.0 {
                                    s += lin.component(mu, j, b).eval_base(&pos)? * vb;
                                }
                            }
                            s
                        }
                        TangentConnection::General(g) => g.component(j, mu).eval(&pos, &vel)?,
                    };
                    if kjmu != 0.0 {
                        bracket += frame.forward_partial(i, j).eval_base(&pos)? * kjmu;
                    }
                }
                // d_mu of the lifted velocity: d_mu d_t q'^i v^0 + d_mu d_k q'^i v^k
                bracket += frame.forward_second_partial(i, mu, 0).eval_base(&pos)?
                    * vel.first().copied().unwrap_or(0.0);
                for kk in 1..=n {
                    let vk = vel.get(kk).copied().unwrap_or(0.0);
                    if vk != 0.0 {
                        bracket += frame.forward_second_partial(i, mu, kk).eval_base(&pos)? * vk;
                    }
                }
                acc += bracket * jfac;
            }
            Ok(acc)
        }
    };

    match k {
        TangentConnection::Linear(_) => {
            // extract linear components by evaluating against basis velocities
            let mut comp = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
            for lambda in 0..=n {
                for i in 1..=n {
                    for beta in 0..=n {
                        let eval = eval_transformed.clone();
                        comp[lambda][i][beta] = ScalarField::function(
                            n,
                            Dependencies::BASE,
                            move |pos_new, _| {
                                let mut basis = vec![0.0; n + 1];
                                basis[beta] = 1.0;
                                eval(i, lambda, pos_new, &basis)
                            },
                        );
                    }
                }
            }
            Ok(TangentConnection::Linear(LinearConnection::new(n, comp)?))
        }
        TangentConnection::General(_) => {
            let mut comp = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
            for (i, row) in comp.iter_mut().enumerate().skip(1) {
                for (lambda, slot) in row.iter_mut().enumerate() {
                    let eval = eval_transformed.clone();
                    *slot = ScalarField::function(n, Dependencies::JET, move |pos_new, vel_new| {
                        eval(i, lambda, pos_new, vel_new)
                    });
                }
            }
            Ok(TangentConnection::General(GeneralConnection::new(n, comp)?))
        }
    }
}

/// Closed-form transform of a linear connection when every component and the
/// frame map itself are expression-backed. Returns `None` when any piece is
/// closure-backed, so the caller can fall back to numeric evaluation.
fn symbolic_linear_transform(
    lin: &LinearConnection,
    frame: &FrameMap,
) -> Option<Result<LinearConnection, GeometryError>> {
    let n = lin.dim();
    // inverse map components as expressions of the new chart
    let mut inv_subs = Vec::with_capacity(n + 1);
    inv_subs.push(Expr::Const(0.0)); // slot 0 unused, time is shared
    for m in 1..=n {
        inv_subs.push(frame.inverse_component(m).as_expr()?);
    }
    let sub = |e: Expr| e.substitute_coords(&inv_subs);

    // all expression pieces, pre-substituted into the new chart
    let mut k_sub = vec![vec![vec![Expr::Const(0.0); n + 1]; n + 1]; n + 1];
    for l in 0..=n {
        for a in 0..=n {
            for b in 0..=n {
                k_sub[l][a][b] = sub(lin.component(l, a, b).as_expr()?);
            }
        }
    }
    let mut dfwd = vec![vec![Expr::Const(0.0); n + 1]; n + 1];
    let mut ddfwd = vec![vec![vec![Expr::Const(0.0); n + 1]; n + 1]; n + 1];
    for i in 1..=n {
        for l in 0..=n {
            dfwd[i][l] = sub(frame.forward_partial(i, l).as_expr()?);
            for m in 0..=n {
                ddfwd[i][l][m] = sub(frame.forward_second_partial(i, l, m).as_expr()?);
            }
        }
    }
    // inverse partials are already functions of the new chart
    let mut dinv = vec![vec![Expr::Const(0.0); n + 1]; n + 1];
    for m in 1..=n {
        for l in 0..=n {
            dinv[m][l] = frame.inverse_partial(m, l).as_expr()?;
        }
    }
    let pull = |nu: usize, beta: usize| -> Expr {
        // velocity pull-back of the basis vector e_beta
        if nu == 0 {
            if beta == 0 {
                Expr::Const(1.0)
            } else {
                Expr::Const(0.0)
            }
        } else {
            dinv[nu][beta].clone()
        }
    };

    let mut comp = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
    for lambda in 0..=n {
        for i in 1..=n {
            for beta in 0..=n {
                let mut total = Expr::Const(0.0);
                for mu in 0..=n {
                    let jfac = if mu == 0 {
                        if lambda == 0 {
                            Expr::Const(1.0)
                        } else {
                            Expr::Const(0.0)
                        }
                    } else {
                        dinv[mu][lambda].clone()
                    };
                    if jfac.is_zero() {
                        continue;
                    }
                    let mut bracket = Expr::Const(0.0);
                    for j in 1..=n {
                        let mut kjmu = Expr::Const(0.0);
                        for nu in 0..=n {
                            kjmu = Expr::add(
                                kjmu,
                                Expr::mul(k_sub[mu][j][nu].clone(), pull(nu, beta)),
                            );
                        }
                        bracket =
                            Expr::add(bracket, Expr::mul(dfwd[i][j].clone(), kjmu));
                    }
                    for nu in 0..=n {
                        bracket = Expr::add(
                            bracket,
                            Expr::mul(ddfwd[i][mu][nu].clone(), pull(nu, beta)),
                        );
                    }
                    total = Expr::add(total, Expr::mul(bracket, jfac));
                }
                comp[lambda][i][beta] = ScalarField::from_expr(n, total);
            }
        }
    }
    Some(LinearConnection::new(n, comp))
}

/// Curvature of a linear connection:
/// `R[lambda][mu][alpha][beta] = d_lambda K_mu^a_b - d_mu K_lambda^a_b
///  + K_lambda^g_b K_mu^a_g - K_mu^g_b K_lambda^a_g`.
///
/// Component partials are symbolic whenever the connection is
/// expression-backed. The temporal-upper row vanishes identically for tilde
/// connections.
#[derive(Debug, Clone)]
pub struct Curvature {
    n: usize,
    k: LinearConnection,
    /// dk[lambda][mu][alpha][beta] = d_lambda K[mu][alpha][beta]
    dk: Vec<Vec<Vec<Vec<ScalarField>>>>,
}

pub fn curvature(k: &LinearConnection) -> Curvature {
    let n = k.dim();
    let dk = (0..=n)
        .map(|lambda| {
            (0..=n)
                .map(|mu| {
                    (0..=n)
                        .map(|alpha| {
                            (0..=n)
                                .map(|beta| k.component(mu, alpha, beta).partial(Slot::Pos(lambda)))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Curvature {
        n,
        k: k.clone(),
        dk,
    }
}

impl Curvature {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Rank-4 component tensor at a position (variance: lower, lower, upper,
    /// lower).
    pub fn at(&self, pos: &[f64]) -> Result<Tensor, EvalError> {
        let d = self.n + 1;
        // cache component values
        let mut kv = vec![0.0; d * d * d];
        for l in 0..d {
            for a in 0..d {
                for b in 0..d {
                    kv[(l * d + a) * d + b] = self.k.component(l, a, b).eval_base(pos)?;
                }
            }
        }
        let mut dkv = vec![0.0; d * d * d * d];
        for l in 0..d {
            for m in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        dkv[((l * d + m) * d + a) * d + b] =
                            self.dk[l][m][a][b].eval_base(pos)?;
                    }
                }
            }
        }
        let mut r = Tensor::zeros(
            d,
            vec![
                Variance::Covariant,
                Variance::Covariant,
                Variance::Contravariant,
                Variance::Covariant,
            ],
        );
        for l in 0..d {
            for m in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        let mut v = dkv[((l * d + m) * d + a) * d + b]
                            - dkv[((m * d + l) * d + a) * d + b];
                        for g in 0..d {
                            v += kv[(l * d + g) * d + b] * kv[(m * d + a) * d + g]
                                - kv[(m * d + g) * d + b] * kv[(l * d + a) * d + g];
                        }
                        r.set(&[l, m, a, b], v);
                    }
                }
            }
        }
        Ok(r)
    }
}

/// Largest curvature component magnitude over the probe positions.
pub fn max_abs_curvature(
    k: &LinearConnection,
    positions: &[Vec<f64>],
) -> Result<f64, GeometryError> {
    let r = curvature(k);
    let mut worst = 0.0f64;
    for pos in positions {
        worst = worst.max(r.at(pos)?.max_abs());
    }
    Ok(worst)
}

/// Flatness test: true iff every curvature component stays below `tol` on
/// the probe lattice.
pub fn is_flat(
    k: &LinearConnection,
    positions: &[Vec<f64>],
    tol: f64,
) -> Result<bool, GeometryError> {
    Ok(max_abs_curvature(k, positions)? < tol)
}

/// The force law that reads `q''^i = 0` in the chart the frame map comes
/// from, expressed in the target chart, together with its affine connection.
///
/// With `Gamma^i = d_t q^i(t, qbar)` the inertial force is
///
/// ```text
/// xi^i = d_t Gamma^i + d_j Gamma^i dq^j + (dq^k - Gamma^k) gamma^i_k,
/// gamma^i_k = d_k Gamma^i - A^i_jk (dq^j - Gamma^j),
/// A^i_jk = (d qbar^m / d q^j d q^k) (d q^i / d qbar^m),
/// ```
///
/// and the connection it defines is flat. For expression-backed frame maps
/// every coefficient below is a closed-form expression, so curvature checks
/// run at machine precision.
pub fn free_motion_equation(
    frame: &FrameMap,
) -> Result<(DynamicEquation, DynamicConnection), GeometryError> {
    let n = frame.dim();

    // Gamma^i and A^i_jk as fields of the target chart
    let gamma_obs: Vec<ScalarField> = (1..=n)
        .map(|i| compose_with_inverse(frame, frame.forward_partial(i, 0)))
        .collect();

    // A^i_jk
    let mut a_fields = vec![vec![vec![ScalarField::zero(n); n + 1]; n + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=n {
            for kk in 1..=n {
                let mut acc = ScalarField::zero(n);
                for m in 1..=n {
                    let dfwd = compose_with_inverse(frame, frame.forward_partial(i, m));
                    acc = acc.plus(&dfwd.times(frame.inverse_second_partial(m, j, kk)));
                }
                a_fields[i][j][kk] = acc;
            }
        }
    }

    // d Gamma^i / d q^lambda through the chain rule (stays symbolic for
    // expression-backed maps)
    let mut dgamma = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
    for i in 1..=n {
        // d_t Gamma^i = (d_t d_t fwd^i) o inv + sum_m (d_m d_t fwd^i) o inv * d_t inv^m
        let mut dt = compose_with_inverse(frame, frame.forward_second_partial(i, 0, 0));
        for m in 1..=n {
            let mixed = compose_with_inverse(frame, frame.forward_second_partial(i, 0, m));
            dt = dt.plus(&mixed.times(frame.inverse_partial(m, 0)));
        }
        dgamma[i][0] = dt;
        for l in 1..=n {
            let mut dl = ScalarField::zero(n);
            for m in 1..=n {
                let mixed = compose_with_inverse(frame, frame.forward_second_partial(i, 0, m));
                dl = dl.plus(&mixed.times(frame.inverse_partial(m, l)));
            }
            dgamma[i][l] = dl;
        }
    }

    // affine coefficients
    let mut g = Vec::with_capacity(n);
    for i in 1..=n {
        let mut m = vec![vec![ScalarField::zero(n); n + 1]; n + 1];
        // gamma^i_{k j} = -A^i_jk ; gamma^i_{k 0} = d_k Gamma^i + A^i_jk Gamma^j
        for kk in 1..=n {
            for j in 1..=n {
                m[kk][j] = ScalarField::zero(n).minus(&a_fields[i][j][kk]);
            }
            let mut k0 = dgamma[i][kk].clone();
            for j in 1..=n {
                k0 = k0.plus(&a_fields[i][j][kk].times(&gamma_obs[j - 1]));
            }
            m[kk][0] = k0;
        }
        // gamma^i_{0 j} = d_j Gamma^i + A^i_jk Gamma^k
        for j in 1..=n {
            let mut v = dgamma[i][j].clone();
            for kk in 1..=n {
                v = v.plus(&a_fields[i][j][kk].times(&gamma_obs[kk - 1]));
            }
            m[0][j] = v;
        }
        // gamma^i_{0 0} = d_t Gamma^i - Gamma^k gamma^i_{k 0}
        let mut v00 = dgamma[i][0].clone();
        for kk in 1..=n {
            v00 = v00.minus(&gamma_obs[kk - 1].times(&m[kk][0]));
        }
        m[0][0] = v00;
        g.push(m);
    }

    let gamma = DynamicConnection::from_affine(n, g)?;
    let xi = xi_from_gamma(&gamma);
    Ok((xi, gamma))
}

/// Compose a field over the source chart with the frame's inverse map:
/// `(field o inverse)(t, q')`. Stays a closed-form expression when both the
/// field and the inverse components are expression-backed.
fn compose_with_inverse(frame: &FrameMap, field: &ScalarField) -> ScalarField {
    let n = frame.dim();
    if let Some(e) = field.as_expr() {
        let mut subs = Vec::with_capacity(n + 1);
        subs.push(Expr::Const(0.0)); // slot 0 unused (time is shared)
        let mut all_expr = true;
        for m in 1..=n {
            match frame.inverse_component(m).as_expr() {
                Some(inv) => subs.push(inv),
                None => {
                    all_expr = false;
                    break;
                }
            }
        }
        if all_expr {
            return ScalarField::from_expr(n, e.substitute_coords(&subs));
        }
    }
    let frame = frame.clone();
    let field = field.clone();
    ScalarField::function(n, Dependencies::BASE, move |pos_new, _| {
        let pos = frame.inverse_pos(pos_new)?;
        field.eval_base(&pos)
    })
}

/// Convenience: the free-motion construction packaged as a linear
/// connection.
pub fn free_motion_connection(frame: &FrameMap) -> Result<LinearConnection, GeometryError> {
    let (_, gamma) = free_motion_equation(frame)?;
    connection_from_gamma(&gamma)
}

/// The force law of a tilde connection on the constrained slice; shorthand
/// for `xi_from_connection` with the rest frame.
pub fn constrained_force_law(k: &TangentConnection) -> Result<DynamicEquation, GeometryError> {
    xi_from_connection(k, &ReferenceFrame::rest(k.dim()))
}
