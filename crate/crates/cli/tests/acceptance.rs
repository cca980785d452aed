//! Acceptance suite: the closed-form oscillator anchors plus the property
//! checks that gate a release. Each test pins its tolerance in code and
//! prints one verdict line (visible with `--nocapture`).
//!
//! Run with:
//!
//! ```text
//! cargo test -p geoflow-cli --test acceptance -- --nocapture
//! ```

use std::f64::consts::PI;

use geoflow_core::{
    apply_soldering, compatibility_residual, connection_from_gamma, extend_mass_metric,
    fd_partial, find_conjugate_points, free_motion_equation, gamma_from_xi, index_form_of_field,
    index_form_of_trajectory, integrate_connection_geodesic, integrate_geodesic, integrate_jacobi,
    lagrange_acceleration, lagrangian_connection, lagrangian_force_law, linear_from_quadratic,
    max_abs_curvature, parse, transform_connection, xi_from_connection, xi_from_gamma, ChartPoint,
    DynamicEquation, Expr, FrameMap, GeodesicSource, IntegratorConfig, JetPoint,
    LagrangianCoefficients, MassMetric, ReferenceFrame, Region, ScalarField, SolderingForm,
    SymbolTable, TangentConnection, TangentVector,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// --- helpers -----------------------------------------------------------

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn field(text: &str, n: usize) -> ScalarField {
    ScalarField::from_expr(n, parse(text, n, &SymbolTable::new()).unwrap())
}

fn tight() -> IntegratorConfig {
    IntegratorConfig {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        ..IntegratorConfig::default()
    }
}

fn random_affine_expr(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Expr {
    let mut e = Expr::Const(rng.gen_range(-amp..amp));
    for i in 1..=n {
        e = Expr::add(
            e,
            Expr::mul(Expr::Const(rng.gen_range(-amp..amp)), Expr::coord(i)),
        );
    }
    e
}

fn random_jets(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<JetPoint> {
    (0..count)
        .map(|_| {
            let t = rng.gen_range(-1.0..1.0);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dq: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            JetPoint::new(t, &q, &dq)
        })
        .collect()
}

struct QuadraticSystem {
    n: usize,
    a: Vec<Vec<Vec<ScalarField>>>,
    b: Vec<Vec<ScalarField>>,
    f: Vec<ScalarField>,
}

fn random_quadratic(rng: &mut ChaCha8Rng, n: usize) -> QuadraticSystem {
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
        let kappa = rng.gen_range(0.5..1.5);
        let restoring = Expr::mul(Expr::Const(-kappa), Expr::coord(i + 1));
        f[i] = ScalarField::from_expr(n, Expr::add(restoring, random_affine_expr(rng, n, 0.1)));
    }
    QuadraticSystem { n, a, b, f }
}

impl QuadraticSystem {
    fn equation(&self, probes: &[JetPoint]) -> DynamicEquation {
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

fn random_lagrangian(rng: &mut ChaCha8Rng, n: usize) -> LagrangianCoefficients {
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
                Expr::mul(Expr::Const(rng.gen_range(-0.1..0.1)), Expr::coord(j + 1))
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

fn oscillator_connection(k: f64) -> geoflow_core::LinearConnection {
    let mut tbl = SymbolTable::new();
    tbl.insert("k", k);
    let probes = Region::unit(1).jet_lattice(3);
    linear_from_quadratic(
        1,
        &[vec![vec![ScalarField::zero(1)]]],
        &[vec![ScalarField::zero(1)]],
        &[ScalarField::from_expr(1, parse("-k*q1", 1, &tbl).unwrap())],
        &probes,
    )
    .unwrap()
}

fn boost_frame(v: f64) -> FrameMap {
    let mut tbl = SymbolTable::new();
    tbl.insert("v", v);
    let f = |t: &str| ScalarField::from_expr(1, parse(t, 1, &tbl).unwrap());
    FrameMap::new(1, vec![f("q1 + v*t")], vec![f("q1 - v*t")]).unwrap()
}

fn rotation_frame(omega: f64) -> FrameMap {
    let mut tbl = SymbolTable::new();
    tbl.insert("w", omega);
    let f = |t: &str| ScalarField::from_expr(2, parse(t, 2, &tbl).unwrap());
    FrameMap::new(
        2,
        vec![
            f("q1*cos(w*t) - q2*sin(w*t)"),
            f("q1*sin(w*t) + q2*cos(w*t)"),
        ],
        vec![
            f("q1*cos(w*t) + q2*sin(w*t)"),
            f("-q1*sin(w*t) + q2*cos(w*t)"),
        ],
    )
    .unwrap()
}

// --- criteria ----------------------------------------------------------

#[test]
fn a01_oscillator_first_conjugate_point_is_half_period() {
    const REL_TOL: f64 = 1e-6;
    for k in [0.25, 1.0, 4.0, 9.0] {
        let conn = oscillator_connection(k);
        let pts = find_conjugate_points(&conn, &[1.0], &[0.0], (0.0, 10.0), &tight()).unwrap();
        let expect = PI / k.sqrt();
        let first = pts.first().expect("conjugate point within the span");
        let rel = ((first.t - expect) / expect).abs();
        assert!(
            rel < REL_TOL,
            "k={k}: first conjugate point {} vs {expect} (rel {rel:.3e})",
            first.t
        );
    }
    println!("PASS first conjugate point = pi/sqrt(k) for k in {{0.25, 1, 4, 9}} (rel < 1e-6)");
}

#[test]
fn a02_repulsive_potential_has_no_conjugate_points() {
    // phi = -(q1)^2/2 turns the restoring force into a repulsion
    let conn = linear_from_quadratic(
        1,
        &[vec![vec![ScalarField::zero(1)]]],
        &[vec![ScalarField::zero(1)]],
        &[field("q1", 1)],
        &Region::unit(1).jet_lattice(3),
    )
    .unwrap();
    let pts = find_conjugate_points(&conn, &[1.0], &[0.0], (0.0, 10.0), &tight()).unwrap();
    assert!(pts.is_empty(), "unexpected conjugate points: {pts:?}");
    println!("PASS repulsive potential yields an empty conjugate list on [0, 10]");
}

#[test]
fn a03_force_law_connection_round_trip() {
    const TOL: f64 = 1e-10;
    let mut rng = rng(101);
    let mut worst = 0.0f64;

    // 20 random quadratic systems
    for case in 0..20 {
        let n = 1 + case % 3;
        let sys = random_quadratic(&mut rng, n);
        let probes = random_jets(&mut rng, n, 200);
        let xi = sys.equation(&probes);
        let gamma = gamma_from_xi(&xi);
        assert!(
            gamma.is_symmetric(&probes).unwrap(),
            "induced connection must be symmetric"
        );
        let back = xi_from_gamma(&gamma);
        for p in &probes {
            for i in 1..=n {
                let a = xi.component(i).eval(&p.pos, &p.vel).unwrap();
                let b = back.component(i).eval(&p.pos, &p.vel).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }

    // 5 expression-backed non-quadratic force laws
    let texts: [(usize, Vec<&str>); 5] = [
        (1, vec!["sin(q1)*dq1^2 - q1"]),
        (1, vec!["exp(0.3*q1)*dq1 - q1^3"]),
        (2, vec!["dq2^2*cos(q1) + t", "-dq1*dq2 + q2"]),
        (2, vec!["0.1*dq1^3 - q1", "0.5*sin(dq2) - q2"]),
        (2, vec!["q2*dq1*dq2", "exp(q1)*0.2 + dq2^2"]),
    ];
    for (n, comps) in texts {
        let xi =
            DynamicEquation::from_fields(n, comps.iter().map(|t| field(t, n)).collect()).unwrap();
        let gamma = gamma_from_xi(&xi);
        let probes = random_jets(&mut rng, n, 200);
        assert!(gamma.is_symmetric(&probes).unwrap());
        let back = xi_from_gamma(&gamma);
        for p in &probes {
            for i in 1..=n {
                let a = xi.component(i).eval(&p.pos, &p.vel).unwrap();
                let b = back.component(i).eval(&p.pos, &p.vel).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < TOL, "round-trip error {worst}");
    println!("PASS force-law round trip on 25 systems x 200 jets (max err {worst:.3e} < 1e-10)");
}

#[test]
fn a04_quadratic_linear_correspondence() {
    const COMP_TOL: f64 = 1e-12;
    const XI_TOL: f64 = 1e-10;
    let mut rng = rng(102);
    let mut worst_comp = 0.0f64;
    let mut worst_xi = 0.0f64;
    for case in 0..6 {
        let n = 1 + case % 3;
        let sys = random_quadratic(&mut rng, n);
        let probes = random_jets(&mut rng, n, 50);
        let xi = sys.equation(&probes);
        let via_gamma = connection_from_gamma(&gamma_from_xi(&xi)).unwrap();
        let direct = linear_from_quadratic(n, &sys.a, &sys.b, &sys.f, &probes).unwrap();
        for p in &probes {
            for l in 0..=n {
                for a in 0..=n {
                    for b in 0..=n {
                        let x = via_gamma.component(l, a, b).eval_base(&p.pos).unwrap();
                        let y = direct.component(l, a, b).eval_base(&p.pos).unwrap();
                        worst_comp = worst_comp.max((x - y).abs());
                    }
                }
            }
        }
        let back =
            xi_from_connection(&TangentConnection::Linear(direct), &ReferenceFrame::rest(n))
                .unwrap();
        for p in &probes {
            for i in 1..=n {
                let x = xi.component(i).eval(&p.pos, &p.vel).unwrap();
                let y = back.component(i).eval(&p.pos, &p.vel).unwrap();
                worst_xi = worst_xi.max((x - y).abs());
            }
        }
    }
    assert!(worst_comp < COMP_TOL, "component mismatch {worst_comp}");
    assert!(worst_xi < XI_TOL, "force-law recovery {worst_xi}");
    println!(
        "PASS affine/linear correspondence (components {worst_comp:.3e} < 1e-12, force law {worst_xi:.3e} < 1e-10)"
    );
}

#[test]
fn a05_free_motion_connections_are_flat_and_oscillator_is_not() {
    const TOL: f64 = 1e-8;
    let positions = Region::unit(2).position_lattice(5);
    let (_, gamma) = free_motion_equation(&rotation_frame(1.0)).unwrap();
    let rot = connection_from_gamma(&gamma).unwrap();
    let rot_r = max_abs_curvature(&rot, &positions).unwrap();
    assert!(rot_r < TOL, "rotating-frame curvature {rot_r}");

    let positions1 = Region::unit(1).position_lattice(5);
    let (_, gamma) = free_motion_equation(&boost_frame(1.7)).unwrap();
    let boost = connection_from_gamma(&gamma).unwrap();
    let boost_r = max_abs_curvature(&boost, &positions1).unwrap();
    assert!(boost_r < TOL, "boost curvature {boost_r}");

    // the oscillator fails the test with the expected component value
    let k = 1.0;
    let osc = oscillator_connection(k);
    let r = geoflow_core::curvature(&osc).at(&[0.0, 0.4]).unwrap();
    let r1010 = r.get(&[1, 0, 1, 0]);
    assert!(
        (r1010 + k).abs() < TOL && r1010.abs() > TOL,
        "oscillator curvature component {r1010}"
    );
    let osc_r = max_abs_curvature(&osc, &positions1).unwrap();
    assert!(osc_r > TOL);
    println!(
        "PASS free-motion flatness (rotation {rot_r:.3e}, boost {boost_r:.3e} < 1e-8; oscillator component {r1010} = -k)"
    );
}

#[test]
fn a06_lagrange_equation_agrees_with_geodesics() {
    const TOL: f64 = 1e-9;
    let mut rng = rng(103);
    let mut worst = 0.0f64;
    for (case, n) in [1usize, 2, 3, 2, 1].into_iter().enumerate() {
        let lag = random_lagrangian(&mut rng, n);
        let span = (0.0, 5.0);
        let q0: Vec<f64> = (0..n).map(|i| 0.4 - 0.1 * i as f64).collect();
        let dq0: Vec<f64> = (0..n).map(|i| 0.1 + 0.1 * i as f64).collect();

        let lag2 = lag.clone();
        let rhs = geoflow_core::ode::FnRhs::new(2 * n, move |t: f64, y: &[f64], dy: &mut [f64]| {
            let mut pos = Vec::with_capacity(n + 1);
            pos.push(t);
            pos.extend_from_slice(&y[..n]);
            let mut vel = Vec::with_capacity(n + 1);
            vel.push(1.0);
            vel.extend_from_slice(&y[n..]);
            let acc = lagrange_acceleration(&lag2, &pos, &vel)?;
            dy[..n].copy_from_slice(&y[n..]);
            dy[n..].copy_from_slice(&acc[1..]);
            Ok(())
        });
        let mut y0 = q0.clone();
        y0.extend_from_slice(&dq0);
        let direct = geoflow_core::ode::integrate(&rhs, span, &y0, &tight()).unwrap();

        let k = lagrangian_connection(&lag).unwrap();
        let geo = integrate_connection_geodesic(&k, &q0, &dq0, span, &tight()).unwrap();

        for s in 0..=200 {
            let t = span.0 + (span.1 - span.0) * s as f64 / 200.0;
            let a = direct.eval(t);
            let (pos, _) = geo.sample(t);
            for i in 0..n {
                worst = worst.max((a[i] - pos[i + 1]).abs());
            }
        }
        assert!(worst < TOL, "case {case} (n={n}): deviation {worst}");
    }
    println!("PASS direct Euler-Lagrange vs geodesic routes on 5 random Lagrangians (sup {worst:.3e} < 1e-9)");
}

#[test]
fn a07_newtonian_compatibility() {
    const TOL: f64 = 1e-10;
    let mut rng = rng(104);
    let mut worst = 0.0f64;
    for n in [1usize, 2, 3] {
        let lag = random_lagrangian(&mut rng, n);
        let xi = lagrangian_force_law(&lag).unwrap();
        let probes = random_jets(&mut rng, n, 60);
        let r = compatibility_residual(&xi, &lag.mass, &probes).unwrap();
        worst = worst.max(r);
        assert!(r < TOL, "n={n}: residual {r}");
    }

    // counterexample: perturb the mass while keeping the oscillator force law
    let xi = DynamicEquation::from_fields(1, vec![field("-q1", 1)]).unwrap();
    let mass = MassMetric::new(1, vec![vec![field("1 + 0.1*q1", 1)]]).unwrap();
    let probes = [
        JetPoint::new(0.0, &[0.5], &[1.0]),
        JetPoint::new(0.3, &[-0.2], &[1.0]),
    ];
    let r = compatibility_residual(&xi, &mass, &probes).unwrap();
    assert!(r > 1e-3, "counterexample residual {r} should exceed 1e-3");
    println!(
        "PASS compatibility residual on Lagrangian systems ({worst:.3e} < 1e-10); perturbed mass fails at {r:.3e} > 1e-3"
    );
}

#[test]
fn a08_jacobi_fields_match_geodesic_variations() {
    let mut rng = rng(105);
    for n in [1usize, 2] {
        let sys = random_quadratic(&mut rng, n);
        let probes = random_jets(&mut rng, n, 30);
        let k = linear_from_quadratic(n, &sys.a, &sys.b, &sys.f, &probes).unwrap();
        let q0: Vec<f64> = (0..n).map(|i| 0.3 - 0.1 * i as f64).collect();
        let dq0: Vec<f64> = (0..n).map(|i| 0.15 * (i as f64 + 1.0)).collect();
        let span = (0.0, 3.0);
        let geo = integrate_connection_geodesic(&k, &q0, &dq0, span, &tight()).unwrap();
        let mut u0 = vec![0.0; n];
        let mut w0 = vec![0.0; n];
        w0[0] = 1.0;
        u0.iter_mut().for_each(|v| *v = 0.0);
        let jac = integrate_jacobi(&k, &geo, &u0, &w0, &tight()).unwrap();

        let deviation = |delta: f64| -> f64 {
            let mut dq = dq0.clone();
            dq[0] += delta;
            let geo2 = integrate_connection_geodesic(&k, &q0, &dq, span, &tight()).unwrap();
            let mut worst = 0.0f64;
            for s in 0..=30 {
                let t = span.0 + (span.1 - span.0) * s as f64 / 30.0;
                let (p1, _) = geo.sample(t);
                let (p2, _) = geo2.sample(t);
                let (u, _) = jac.sample(t);
                for i in 1..=n {
                    worst = worst.max(((p2[i] - p1[i]) / delta - u[i]).abs());
                }
            }
            worst
        };
        let d1 = deviation(1e-3);
        let d2 = deviation(5e-4);
        let ratio = d1 / d2;
        assert!(
            (ratio - 2.0).abs() < 0.2,
            "n={n}: halving the variation should halve the deviation (ratio {ratio:.3}, {d1:.3e} vs {d2:.3e})"
        );
        println!("PASS linearised flow matches finite variations for n={n} (Richardson ratio {ratio:.3} = 2.0 +- 0.2)");
    }
}

#[test]
fn a09_index_form_values() {
    const JACOBI_TOL: f64 = 1e-6;
    const ANALYTIC_TOL: f64 = 1e-5;

    // vanishing on integrated deviation fields that are zero at both ends
    let k = oscillator_connection(1.0);
    let g = extend_mass_metric(&MassMetric::identity(1), "lab");
    let geo = integrate_connection_geodesic(&k, &[1.0], &[0.0], (0.0, PI), &tight()).unwrap();
    let jac = integrate_jacobi(&k, &geo, &[0.0], &[1.0], &tight()).unwrap();
    let on_jacobi = index_form_of_trajectory(&k, &g, &geo, &jac, 0.0, PI).unwrap();
    assert!(on_jacobi.abs() < JACOBI_TOL, "on a deviation field: {on_jacobi}");

    // a second, two-dimensional system: take the null direction at the first
    // conjugate time so the integrated field vanishes at both ends
    let mut rng = rng(106);
    let lag = random_lagrangian(&mut rng, 2);
    let k2 = lagrangian_connection(&lag).unwrap();
    let g2 = extend_mass_metric(&lag.mass, "lab");
    let pts = find_conjugate_points(&k2, &[0.4, -0.2], &[0.1, 0.2], (0.0, 10.0), &tight()).unwrap();
    let t_star = pts.first().expect("conjugate point exists").t;
    let geo2 =
        integrate_connection_geodesic(&k2, &[0.4, -0.2], &[0.1, 0.2], (0.0, t_star), &tight())
            .unwrap();
    // find the null direction by integrating the two basis deviation fields
    let jac_a = integrate_jacobi(&k2, &geo2, &[0.0, 0.0], &[1.0, 0.0], &tight()).unwrap();
    let jac_b = integrate_jacobi(&k2, &geo2, &[0.0, 0.0], &[0.0, 1.0], &tight()).unwrap();
    let (ua, _) = jac_a.sample(t_star);
    let (ub, _) = jac_b.sample(t_star);
    // c_a * ua + c_b * ub = 0 at t_star
    let (c_a, c_b) = if ub[1].abs() > ua[1].abs() {
        (1.0, -ua[1] / ub[1])
    } else {
        (-ub[1] / ua[1], 1.0)
    };
    let w0 = [c_a, c_b];
    let jac_null = integrate_jacobi(&k2, &geo2, &[0.0, 0.0], &w0, &tight()).unwrap();
    let (u_end, _) = jac_null.sample(t_star);
    assert!(
        u_end[1].abs() < 1e-6 && u_end[2].abs() < 1e-6,
        "null field should vanish at the conjugate time: {u_end:?}"
    );
    let on_null = index_form_of_trajectory(&k2, &g2, &geo2, &jac_null, 0.0, t_star).unwrap();
    assert!(on_null.abs() < JACOBI_TOL, "on the null field: {on_null}");

    // analytic value for u = t (pi - t) on the unit oscillator
    let val = index_form_of_field(
        &k,
        &g,
        &geo,
        &|t| vec![t * (PI - t)],
        &|t| vec![PI - 2.0 * t],
        0.0,
        PI,
    )
    .unwrap();
    let expect = PI.powi(3) / 3.0 - PI.powi(5) / 30.0;
    assert!(
        (val - expect).abs() < ANALYTIC_TOL,
        "parabola field: {val} vs {expect}"
    );
    println!(
        "PASS index form: {on_jacobi:.2e} and {on_null:.2e} on deviation fields (< 1e-6); parabola {val:.6} vs {expect:.6} (< 1e-5)"
    );
}

#[test]
fn a10_transformed_connections_are_covariant() {
    const TOL: f64 = 1e-8;
    let mut rng = rng(107);
    let mut worst_all = 0.0f64;
    for (label, frame, n) in [
        ("boost", boost_frame(1.3), 1usize),
        ("rotation", rotation_frame(0.9), 2usize),
    ] {
        let sys = random_quadratic(&mut rng, n);
        let probes = random_jets(&mut rng, n, 20);
        let k = linear_from_quadratic(n, &sys.a, &sys.b, &sys.f, &probes).unwrap();

        let span = (0.0, 5.0);
        let q0: Vec<f64> = (0..n).map(|i| 0.3 + 0.2 * i as f64).collect();
        let dq0: Vec<f64> = (0..n).map(|i| 0.1 - 0.15 * i as f64).collect();
        let geo = integrate_connection_geodesic(&k, &q0, &dq0, span, &tight()).unwrap();

        let base = ChartPoint::from_time_and_space(span.0, &q0).unwrap();
        let mut dot = vec![1.0];
        dot.extend_from_slice(&dq0);
        let pushed = frame
            .push_vector(&TangentVector::new(base, dot).unwrap())
            .unwrap();
        let moved = transform_connection(&TangentConnection::Linear(k), &frame).unwrap();
        let lin = moved.as_linear().unwrap();
        let geo2 = integrate_connection_geodesic(
            lin,
            pushed.base.spatial(),
            &pushed.dot[1..],
            span,
            &tight(),
        )
        .unwrap();

        let mut worst = 0.0f64;
        for s in 0..=200 {
            let t = span.0 + (span.1 - span.0) * s as f64 / 200.0;
            let (pos, _) = geo.sample(t);
            let mapped = frame.forward_pos(&pos).unwrap();
            let (pos2, _) = geo2.sample(t);
            for i in 1..=n {
                worst = worst.max((mapped[i] - pos2[i]).abs());
            }
        }
        assert!(worst < TOL, "{label}: covariance deviation {worst}");
        worst_all = worst_all.max(worst);
    }
    println!("PASS geodesic covariance under boost and rotation (sup {worst_all:.3e} < 1e-8)");
}

#[test]
fn a11_soldering_leaves_constrained_geodesics_unchanged() {
    const TOL: f64 = 1e-8;
    let mut rng = rng(108);
    let n = 2;
    let sys = random_quadratic(&mut rng, n);
    let probes = random_jets(&mut rng, n, 20);
    let k = linear_from_quadratic(n, &sys.a, &sys.b, &sys.f, &probes).unwrap();
    let tk = TangentConnection::Linear(k.clone());

    let span = (0.0, 5.0);
    let q0 = [0.4, -0.3];
    let dq0 = [0.2, 0.1];
    let reference = integrate_connection_geodesic(&k, &q0, &dq0, span, &tight()).unwrap();

    let mut worst_all = 0.0f64;
    for _ in 0..20 {
        let s = ScalarField::from_expr(n, random_affine_expr(&mut rng, n, 1.0));
        let mut h = vec![vec![ScalarField::zero(n); n + 1]; n];
        for row in h.iter_mut() {
            for slot in row.iter_mut() {
                if rng.gen_bool(0.7) {
                    *slot = ScalarField::from_expr(n, random_affine_expr(&mut rng, n, 0.8));
                }
            }
        }
        let sigma = SolderingForm::new(n, s, h).unwrap();
        let deformed = TangentConnection::General(apply_soldering(&tk, &sigma).unwrap());
        let geo = integrate_geodesic(
            GeodesicSource::Connection(&deformed),
            &q0,
            &dq0,
            span,
            &tight(),
        )
        .unwrap();
        let mut worst = 0.0f64;
        for s in 0..=100 {
            let t = span.0 + (span.1 - span.0) * s as f64 / 100.0;
            let (a, _) = reference.sample(t);
            let (b, _) = geo.sample(t);
            for i in 1..=n {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < TOL, "deformation moved the geodesic by {worst}");
        worst_all = worst_all.max(worst);
    }
    println!("PASS 20 random deformations leave constrained geodesics unchanged (sup {worst_all:.3e} < 1e-8)");
}

#[test]
fn a12_parser_differentiator_and_determinism() {
    const FD_TOL: f64 = 1e-6;
    // a 50-expression corpus: every derivative matches central differences
    let corpus: Vec<String> = {
        let mut texts = Vec::new();
        let bases = [
            "q1", "q2", "dq1", "dq2", "t",
            "q1^2", "q1*q2", "sin(q1)", "cos(q2)", "exp(0.3*q1)",
        ];
        for (i, b) in bases.iter().enumerate() {
            texts.push((*b).to_string());
            texts.push(format!("{b} + q2*dq1"));
            texts.push(format!("{b} * (1 + 0.1*t)"));
            texts.push(format!("{b} - dq2^2"));
            texts.push(format!("({b}) / (2 + cos(q{}))", 1 + i % 2));
        }
        texts
    };
    assert_eq!(corpus.len(), 50);
    let tbl = SymbolTable::new();
    let mut worst = 0.0f64;
    let mut rng = rng(109);
    for text in &corpus {
        let expr = parse(text, 2, &tbl).unwrap();
        let f = ScalarField::from_expr(2, expr);
        for slot in [
            geoflow_core::Slot::Pos(0),
            geoflow_core::Slot::Pos(1),
            geoflow_core::Slot::Pos(2),
            geoflow_core::Slot::Vel(1),
            geoflow_core::Slot::Vel(2),
        ] {
            let sym = f.partial(slot);
            for _ in 0..4 {
                let pos = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let vel = [1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let a = sym.eval(&pos, &vel).unwrap();
                let b = fd_partial(&f, &pos, &vel, slot, None).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < FD_TOL, "symbolic vs finite differences {worst}");

    // malformed inputs carry byte offsets
    for (text, offset) in [("q1 +", 4), ("sin q1", 4), ("(q1", 3), ("q1 ** 2", 4)] {
        let err = parse(text, 2, &tbl).unwrap_err();
        assert_eq!(err.offset, offset, "`{text}` reported offset {}", err.offset);
    }

    // scenario runs are byte-deterministic
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("osc.toml");
    std::fs::write(
        &scenario,
        r#"
dimension = 1
tasks = ["geodesic", "conjugate"]

[system]
kind = "quadratic"
f = ["-q1"]

[initial]
q = [1.0]
dq = [0.0]
span = [0.0, 10.0]
"#,
    )
    .unwrap();
    let mut blobs = Vec::new();
    for sub in ["x", "y"] {
        let out = dir.path().join(sub);
        let report = geoflow_cli::run_scenario(&scenario, &out).unwrap();
        assert!(report.all_ok());
        let mut blob = std::fs::read(out.join("geodesic.csv")).unwrap();
        blob.extend(std::fs::read(out.join("report.txt")).unwrap());
        blobs.push(blob);
    }
    assert_eq!(blobs[0], blobs[1]);
    println!(
        "PASS parser corpus of 50 expressions (fd gap {worst:.3e} < 1e-6), positioned errors, byte-identical runs"
    );
}
