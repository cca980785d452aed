//! Task execution: every requested task appears in the report exactly once,
//! pass or fail; numeric failures are recorded and surfaced through the exit
//! status instead of aborting the remaining tasks.

use std::path::Path;

use thiserror::Error;

use geoflow_core::{
    compatibility_residual, extend_mass_metric, find_conjugate_points,
    integrate_connection_geodesic, integrate_geodesic, integrate_jacobi, max_abs_curvature,
    sectional_scalar, ChartPoint, GeodesicSource, GeometryError, MassMetric, TangentVector,
};

use crate::csvout::{emit_geodesic_csv, emit_jacobi_csv};
use crate::report::{num, vec_nums, RunReport, TaskReport};
use crate::scenario::{load, Initial, Scenario, ScenarioError, Task};

/// Tolerance of the flatness verdict.
pub const FLATNESS_TOL: f64 = 1e-8;
/// Residual below which a (force law, mass metric) pair counts as Newtonian.
pub const COMPAT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot write `{path}`: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

fn output_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Output {
        path: path.display().to_string(),
        source,
    }
}

/// Run a scenario file, writing one CSV per trajectory task and `report.txt`
/// into `out_dir`.
pub fn run_scenario(path: &Path, out_dir: &Path) -> Result<RunReport, RunError> {
    let scenario = load(path)?;
    std::fs::create_dir_all(out_dir).map_err(output_err(out_dir))?;

    let mut tasks = Vec::new();
    let mut files = Vec::new();
    for task in &scenario.tasks {
        let entry = match task {
            Task::Convert => task_convert(&scenario),
            Task::Geodesic => task_geodesic(&scenario, out_dir, &mut files)?,
            Task::Jacobi => task_jacobi(&scenario, out_dir, &mut files)?,
            Task::Conjugate => task_conjugate(&scenario),
            Task::Curvature => task_curvature(&scenario),
            Task::CheckFlat => task_check_flat(&scenario),
            Task::CheckSymmetric => task_check_symmetric(&scenario),
            Task::CheckCompat => task_check_compat(&scenario),
        };
        tasks.push(entry);
    }

    let report = RunReport {
        scenario: scenario.name.clone(),
        dimension: scenario.n,
        system: scenario.system_kind.to_string(),
        tasks,
        files,
    };
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, report.render()).map_err(output_err(&report_path))?;
    Ok(report)
}

/// Validate a scenario without running it; returns the summary lines.
pub fn validate_scenario(path: &Path) -> Result<Vec<String>, ScenarioError> {
    let sc = load(path)?;
    let tasks: Vec<&str> = sc.tasks.iter().map(|t| t.name()).collect();
    Ok(vec![
        format!("scenario: {}", sc.name),
        format!("dimension: {}", sc.n),
        format!("system: {}", sc.system_kind),
        format!("tasks: {}", tasks.join(", ")),
        "ok".to_string(),
    ])
}

/// The convert task as plain lines (also used by the `convert` verb).
pub fn convert_lines(sc: &Scenario) -> Result<Vec<String>, GeometryError> {
    let n = sc.n;
    let mut lines = Vec::new();
    lines.push(format!(
        "probe: t={}, q={}, dq={}",
        num(sc.probe.pos[0]),
        vec_nums(&sc.probe.pos[1..]),
        vec_nums(&sc.probe.vel[1..])
    ));
    for i in 1..=n {
        for lambda in 0..=n {
            let v = sc
                .gamma
                .coefficient(i, lambda)
                .eval(&sc.probe.pos, &sc.probe.vel)?;
            lines.push(format!("gamma[{i}][{lambda}] = {}", num(v)));
        }
    }
    match &sc.linear {
        Some(k) => {
            for lambda in 0..=n {
                for i in 1..=n {
                    for beta in 0..=n {
                        let v = k.component(lambda, i, beta).eval_base(&sc.probe.pos)?;
                        lines.push(format!("K[{lambda}][{i}][{beta}] = {}", num(v)));
                    }
                }
            }
        }
        None => lines.push(
            "K: not available (general force laws have no distinguished linear extension)"
                .to_string(),
        ),
    }
    Ok(lines)
}

fn task_convert(sc: &Scenario) -> TaskReport {
    match convert_lines(sc) {
        Ok(lines) => TaskReport {
            task: Task::Convert.name().to_string(),
            ok: true,
            lines,
        },
        Err(e) => failed(Task::Convert, e),
    }
}

fn failed(task: Task, err: impl std::fmt::Display) -> TaskReport {
    TaskReport {
        task: task.name().to_string(),
        ok: false,
        lines: vec![format!("error: {err}")],
    }
}

fn initial(sc: &Scenario) -> &Initial {
    sc.initial
        .as_ref()
        .expect("validated: trajectory tasks require initial data")
}

fn integrate_system_geodesic(
    sc: &Scenario,
) -> Result<geoflow_core::GeodesicTrajectory, GeometryError> {
    let init = initial(sc);
    match &sc.linear {
        Some(k) => {
            integrate_connection_geodesic(k, &init.q, &init.dq, init.span, &sc.integrator)
        }
        None => integrate_geodesic(
            GeodesicSource::Equation(&sc.xi),
            &init.q,
            &init.dq,
            init.span,
            &sc.integrator,
        ),
    }
}

fn task_geodesic(
    sc: &Scenario,
    out_dir: &Path,
    files: &mut Vec<String>,
) -> Result<TaskReport, RunError> {
    let init = initial(sc);
    let geo = match integrate_system_geodesic(sc) {
        Ok(g) => g,
        Err(e) => return Ok(failed(Task::Geodesic, e)),
    };
    let file_name = "geodesic.csv";
    let path = out_dir.join(file_name);
    emit_geodesic_csv(&geo, sc.samples, &path).map_err(output_err(&path))?;
    files.push(file_name.to_string());
    let (pos, vel) = geo.end_state();
    Ok(TaskReport {
        task: Task::Geodesic.name().to_string(),
        ok: true,
        lines: vec![
            format!("span: {} .. {}", num(init.span.0), num(init.span.1)),
            format!("samples: {}", sc.samples),
            format!("file: {file_name}"),
            format!("final q: {}", vec_nums(&pos[1..])),
            format!("final dq: {}", vec_nums(&vel[1..])),
        ],
    })
}

fn task_jacobi(
    sc: &Scenario,
    out_dir: &Path,
    files: &mut Vec<String>,
) -> Result<TaskReport, RunError> {
    let init = initial(sc);
    let k = sc.linear.as_ref().expect("validated: jacobi needs a linear connection");
    let (u0, w0) = sc.jacobi.as_ref().expect("validated: jacobi section present");
    let geo = match integrate_connection_geodesic(k, &init.q, &init.dq, init.span, &sc.integrator)
    {
        Ok(g) => g,
        Err(e) => return Ok(failed(Task::Jacobi, e)),
    };
    let jac = match integrate_jacobi(k, &geo, u0, w0, &sc.integrator) {
        Ok(j) => j,
        Err(e) => return Ok(failed(Task::Jacobi, e)),
    };
    let file_name = "jacobi.csv";
    let path = out_dir.join(file_name);
    emit_jacobi_csv(&geo, &jac, sc.samples, &path).map_err(output_err(&path))?;
    files.push(file_name.to_string());
    let (u, w) = jac.sample(init.span.1);
    Ok(TaskReport {
        task: Task::Jacobi.name().to_string(),
        ok: true,
        lines: vec![
            format!("span: {} .. {}", num(init.span.0), num(init.span.1)),
            format!("file: {file_name}"),
            format!("final u: {}", vec_nums(&u[1..])),
            format!("final w: {}", vec_nums(&w[1..])),
        ],
    })
}

fn effective_mass(sc: &Scenario) -> (MassMetric, &'static str) {
    match &sc.mass {
        Some(m) => (m.clone(), sc.mass_source),
        None => (MassMetric::identity(sc.n), "identity (default)"),
    }
}

fn task_conjugate(sc: &Scenario) -> TaskReport {
    let init = initial(sc);
    let k = sc
        .linear
        .as_ref()
        .expect("validated: conjugate needs a linear connection");
    let points = match find_conjugate_points(k, &init.q, &init.dq, init.span, &sc.integrator) {
        Ok(p) => p,
        Err(e) => return failed(Task::Conjugate, e),
    };
    let mut lines = Vec::new();
    if points.is_empty() {
        lines.push("conjugate points: none".to_string());
    } else {
        let rendered: Vec<String> = points
            .iter()
            .map(|p| {
                if p.degenerate {
                    format!("{} (degenerate)", num(p.t))
                } else {
                    num(p.t)
                }
            })
            .collect();
        lines.push(format!("conjugate points: {}", rendered.join(", ")));
        lines.push(format!("count: {}", points.len()));
    }

    // curvature-sign diagnostic along the motion: the metric-lowered pairing
    // g(u, R(u, v)v) for each spatial basis direction against the velocity
    match sectional_range(sc) {
        Ok(Some((lo, hi))) => {
            lines.push(format!("sectional scalar range: {} .. {}", num(lo), num(hi)));
            if lo > 0.0 {
                lines.push("sectional scalar positive: no conjugate points expected".to_string());
            } else if hi < 0.0 {
                lines.push(format!(
                    "sectional scalar below {}: conjugate spacing at most {}",
                    num(hi),
                    num(core::f64::consts::PI / (-hi).sqrt())
                ));
            }
        }
        Ok(None) => {}
        Err(e) => return failed(Task::Conjugate, e),
    }
    TaskReport {
        task: Task::Conjugate.name().to_string(),
        ok: true,
        lines,
    }
}

fn sectional_range(sc: &Scenario) -> Result<Option<(f64, f64)>, GeometryError> {
    let init = initial(sc);
    let k = match &sc.linear {
        Some(k) => k,
        None => return Ok(None),
    };
    let (mass, _) = effective_mass(sc);
    let g = extend_mass_metric(&mass, "scenario chart");
    let geo = integrate_connection_geodesic(k, &init.q, &init.dq, init.span, &sc.integrator)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in 0..=20 {
        let t = init.span.0 + (init.span.1 - init.span.0) * s as f64 / 20.0;
        let (pos, vel) = geo.sample(t);
        let p = ChartPoint::new(pos)?;
        let v = TangentVector::new(p.clone(), vel)?;
        for i in 1..=sc.n {
            let mut dot = vec![0.0; sc.n + 1];
            dot[i] = 1.0;
            let u = TangentVector::new(p.clone(), dot)?;
            let val = sectional_scalar(k, &g, &p, &u, &v)?;
            lo = lo.min(val);
            hi = hi.max(val);
        }
    }
    Ok(Some((lo, hi)))
}

fn task_curvature(sc: &Scenario) -> TaskReport {
    let k = sc
        .linear
        .as_ref()
        .expect("validated: curvature needs a linear connection");
    let positions = sc.region.position_lattice(5);
    let max_r = match max_abs_curvature(k, &positions) {
        Ok(v) => v,
        Err(e) => return failed(Task::Curvature, e),
    };
    let mut lines = vec![format!("max|R| over region lattice: {}", num(max_r))];
    let r = geoflow_core::curvature(k);
    match r.at(&sc.probe.pos) {
        Ok(tensor) => {
            let n = sc.n;
            let mut any = false;
            for l in 0..=n {
                for m in 0..=n {
                    for a in 0..=n {
                        for b in 0..=n {
                            let v = tensor.get(&[l, m, a, b]);
                            if v.abs() > 1e-12 {
                                lines.push(format!("R[{l}][{m}][{a}][{b}] = {}", num(v)));
                                any = true;
                            }
                        }
                    }
                }
            }
            if !any {
                lines.push("all components at probe below 1e-12".to_string());
            }
        }
        Err(e) => return failed(Task::Curvature, e),
    }
    TaskReport {
        task: Task::Curvature.name().to_string(),
        ok: true,
        lines,
    }
}

fn task_check_flat(sc: &Scenario) -> TaskReport {
    let k = sc
        .linear
        .as_ref()
        .expect("validated: check:flat needs a linear connection");
    let positions = sc.region.position_lattice(5);
    match max_abs_curvature(k, &positions) {
        Ok(max_r) => {
            let line = if max_r < FLATNESS_TOL {
                format!("flat: true, max|R| < {FLATNESS_TOL:e} (max|R| = {})", num(max_r))
            } else {
                format!("flat: false, max|R| = {} (tol {FLATNESS_TOL:e})", num(max_r))
            };
            TaskReport {
                task: Task::CheckFlat.name().to_string(),
                ok: true,
                lines: vec![line],
            }
        }
        Err(e) => failed(Task::CheckFlat, e),
    }
}

fn task_check_symmetric(sc: &Scenario) -> TaskReport {
    let probes = sc.region.jet_lattice(5);
    match sc.gamma.is_symmetric(&probes) {
        Ok(sym) => TaskReport {
            task: Task::CheckSymmetric.name().to_string(),
            ok: true,
            lines: vec![format!("symmetric: {sym}")],
        },
        Err(e) => failed(Task::CheckSymmetric, e),
    }
}

fn task_check_compat(sc: &Scenario) -> TaskReport {
    let (mass, source) = effective_mass(sc);
    let probes = sc.region.jet_lattice(5);
    match compatibility_residual(&sc.xi, &mass, &probes) {
        Ok(r) => {
            let line = if r < COMPAT_TOL {
                format!(
                    "newtonian: true, residual < {COMPAT_TOL:e} (residual = {}, mass: {source})",
                    num(r)
                )
            } else {
                format!(
                    "newtonian: false, residual = {} (tol {COMPAT_TOL:e}, mass: {source})",
                    num(r)
                )
            };
            TaskReport {
                task: Task::CheckCompat.name().to_string(),
                ok: true,
                lines: vec![line],
            }
        }
        Err(e) => failed(Task::CheckCompat, e),
    }
}
