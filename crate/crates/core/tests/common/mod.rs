//! Shared generators for the property suites: seeded random polynomial
//! fields, quadratic systems and Lagrangians with bounded dynamics.

#![allow(dead_code)]

use geoflow_core::{
    parse, DynamicEquation, Expr, JetPoint, LagrangianCoefficients, MassMetric, ScalarField,
    SymbolTable,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn expr_field(text: &str, n: usize) -> ScalarField {
    ScalarField::from_expr(n, parse(text, n, &SymbolTable::new()).unwrap())
}

/// A random low-order polynomial in the coordinates: `c0 + sum c_i q^i`,
/// with coefficients bounded by `amp`.
pub fn random_affine_expr(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Expr {
    let mut e = Expr::Const(rng.gen_range(-amp..amp));
    for i in 1..=n {
        e = Expr::add(
            e,
            Expr::mul(Expr::Const(rng.gen_range(-amp..amp)), Expr::coord(i)),
        );
    }
    e
}

/// Random jet points in the box `t, q, dq` within `[-1, 1]`.
pub fn random_jets(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<JetPoint> {
    (0..count)
        .map(|_| {
            let t = rng.gen_range(-1.0..1.0);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dq: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            JetPoint::new(t, &q, &dq)
        })
        .collect()
}

/// Coefficient arrays of a random quadratic force law whose trajectories
/// stay bounded on short spans: `a` small and symmetric, `b` small, `f`
/// dominated by a linear restoring term.
pub struct RandomQuadratic {
    pub n: usize,
    pub a: Vec<Vec<Vec<ScalarField>>>,
    pub b: Vec<Vec<ScalarField>>,
    pub f: Vec<ScalarField>,
}

pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize) -> RandomQuadratic {
    let mut a = vec![vec![vec![ScalarField::zero(n); n]; n]; n];
    let mut b = vec![vec![ScalarField::zero(n); n]; n];
    let mut f = vec![ScalarField::zero(n); n];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let e = random_affine_expr(rng, n, 0.05);
                a[i][j][k] = ScalarField::from_expr(n, e.clone());
                a[i][k][j] = ScalarField::from_expr(n, e);
            }
            b[i][j] = ScalarField::from_expr(n, random_affine_expr(rng, n, 0.2));
        }
        // confining restoring force plus a small perturbation
        let kappa = rng.gen_range(0.5..1.5);
        let restoring = Expr::mul(Expr::Const(-kappa), Expr::coord(i + 1));
        let f_e = Expr::add(restoring, random_affine_expr(rng, n, 0.1));
        f[i] = ScalarField::from_expr(n, f_e);
    }
    RandomQuadratic { n, a, b, f }
}

impl RandomQuadratic {
    pub fn equation(&self, probes: &[JetPoint]) -> DynamicEquation {
        DynamicEquation::quadratic(
            self.n,
            self.a.clone(),
            self.b.clone(),
            self.f.clone(),
            probes,
        )
        .unwrap()
    }
}

/// A random non-degenerate quadratic Lagrangian: mass metric close to the
/// identity, small linear coefficient, confining potential.
pub fn random_lagrangian(rng: &mut ChaCha8Rng, n: usize) -> LagrangianCoefficients {
    let mut m = vec![vec![ScalarField::zero(n); n]; n];
    for i in 0..n {
        for j in i..n {
            let e = if i == j {
                Expr::add(
                    Expr::Const(rng.gen_range(1.0..1.6)),
                    Expr::mul(
                        Expr::Const(rng.gen_range(-0.15..0.15)),
                        Expr::unary(geoflow_core::expr::UnaryOp::Sin, Expr::coord(i + 1)),
                    ),
                )
            } else {
                Expr::mul(
                    Expr::Const(rng.gen_range(-0.1..0.1)),
                    Expr::coord(j + 1),
                )
            };
            m[i][j] = ScalarField::from_expr(n, e.clone());
            m[j][i] = ScalarField::from_expr(n, e);
        }
    }
    let mass = MassMetric::new(n, m).unwrap();
    let linear: Vec<ScalarField> = (0..n)
        .map(|_| ScalarField::from_expr(n, random_affine_expr(rng, n, 0.1)))
        .collect();
    let mut pot = Expr::Const(0.0);
    for i in 1..=n {
        pot = Expr::sub(
            pot,
            Expr::mul(
                Expr::Const(rng.gen_range(0.3..0.7)),
                Expr::pow(Expr::coord(i), Expr::Const(2.0)),
            ),
        );
    }
    LagrangianCoefficients::new(mass, linear, ScalarField::from_expr(n, pot)).unwrap()
}
