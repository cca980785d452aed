//! Scenario files: a single TOML document declares the dimension, named
//! constants, one system, optional frame/region/probe data and the tasks to
//! run. Expressions are strings in the scalar grammar of the core crate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use geoflow_core::{
    connection_from_gamma, free_motion_equation, gamma_from_xi, lagrangian_connection,
    lagrangian_force_law, parse, DynamicConnection, DynamicEquation, FrameMap, GeometryError,
    IntegratorConfig, JetPoint, LagrangianCoefficients, LinearConnection, MassMetric, Method,
    ParseError, ReferenceFrame, Region, ScalarField, SymbolTable,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("key `{key}`: {err}")]
    Expr { key: String, err: ParseError },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("key `{key}`: {err}")]
    Geometry { key: String, err: GeometryError },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dimension: usize,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub system: SystemSection,
    #[serde(default)]
    pub frame: Option<FrameSection>,
    #[serde(default)]
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub jacobi: Option<JacobiSection>,
    #[serde(default)]
    pub region: Option<RegionSection>,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub mass: Option<MassSection>,
    pub tasks: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSection {
    /// `xi^i = a^i_jk dq^j dq^k + b^i_j dq^j + f^i`
    Quadratic {
        #[serde(default)]
        a: Option<Vec<Vec<Vec<String>>>>,
        #[serde(default)]
        b: Option<Vec<Vec<String>>>,
        #[serde(default)]
        f: Option<Vec<String>>,
    },
    /// general force law components `xi^i(t, q, dq)`
    General { xi: Vec<String> },
    /// quadratic Lagrangian `(1/2) m_ij dq^i dq^j + k_i dq^i + f`
    Lagrangian {
        m: Vec<Vec<String>>,
        #[serde(default)]
        k: Option<Vec<String>>,
        #[serde(default)]
        f: Option<String>,
    },
    /// inertial motion seen through a chart transition
    FreeMotion {
        forward: Vec<String>,
        inverse: Vec<String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    pub gamma: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub span: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_method() -> String {
    "rk45".to_string()
}

fn default_tol() -> f64 {
    1e-10
}

fn default_samples() -> usize {
    1001
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            method: default_method(),
            abs_tol: default_tol(),
            rel_tol: default_tol(),
            max_step: None,
            step: None,
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiSection {
    pub u0: Vec<f64>,
    pub w0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    #[serde(default)]
    pub t: Option<[f64; 2]>,
    #[serde(default)]
    pub q: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub dq: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default)]
    pub t: f64,
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSection {
    pub m: Vec<Vec<String>>,
}

/// Requested work items, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Convert,
    Geodesic,
    Jacobi,
    Conjugate,
    Curvature,
    CheckFlat,
    CheckSymmetric,
    CheckCompat,
}

impl Task {
    pub fn parse(text: &str) -> Option<Task> {
        Some(match text {
            "convert" => Task::Convert,
            "geodesic" => Task::Geodesic,
            "jacobi" => Task::Jacobi,
            "conjugate" => Task::Conjugate,
            "curvature" => Task::Curvature,
            "check:flat" => Task::CheckFlat,
            "check:symmetric" => Task::CheckSymmetric,
            "check:compat" => Task::CheckCompat,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Convert => "convert",
            Task::Geodesic => "geodesic",
            Task::Jacobi => "jacobi",
            Task::Conjugate => "conjugate",
            Task::Curvature => "curvature",
            Task::CheckFlat => "check:flat",
            Task::CheckSymmetric => "check:symmetric",
            Task::CheckCompat => "check:compat",
        }
    }
}

/// A fully validated scenario with all core objects constructed.
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub system_kind: &'static str,
    pub xi: DynamicEquation,
    pub gamma: DynamicConnection,
    /// present for quadratic, lagrangian and free-motion systems
    pub linear: Option<LinearConnection>,
    pub lagrangian: Option<LagrangianCoefficients>,
    pub frame_map: Option<FrameMap>,
    pub frame: Option<ReferenceFrame>,
    pub mass: Option<MassMetric>,
    /// where the mass metric came from: `declared`, `lagrangian` or `none`
    pub mass_source: &'static str,
    pub initial: Option<Initial>,
    pub integrator: IntegratorConfig,
    pub samples: usize,
    pub jacobi: Option<(Vec<f64>, Vec<f64>)>,
    pub region: Region,
    pub probe: JetPoint,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone)]
pub struct Initial {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub span: (f64, f64),
}

pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ScenarioFile = toml::from_str(&text)?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    build(name, file)
}

fn invalid(key: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn geometry(key: &str) -> impl Fn(GeometryError) -> ScenarioError + '_ {
    move |err| ScenarioError::Geometry {
        key: key.to_string(),
        err,
    }
}

/// Reject constant names that would shadow variables or functions.
fn check_constant_names(constants: &BTreeMap<String, f64>) -> Result<(), ScenarioError> {
    const RESERVED: [&str; 7] = ["t", "sin", "cos", "exp", "log", "sqrt", "abs"];
    for name in constants.keys() {
        let key = format!("constants.{name}");
        if RESERVED.contains(&name.as_str()) {
            return Err(invalid(&key, "name is reserved"));
        }
        let mut chars = name.chars();
        let head_ok = chars
            .next()
            .map(|c| c.is_ascii_alphabetic() || c == '_')
            .unwrap_or(false);
        if !head_ok || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(invalid(&key, "not a valid identifier"));
        }
        let indexed = |prefix: &str| {
            name.strip_prefix(prefix)
                .map(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                .unwrap_or(false)
        };
        if indexed("q") || indexed("dq") {
            return Err(invalid(&key, "name shadows a coordinate variable"));
        }
    }
    Ok(())
}

struct ExprContext {
    n: usize,
    symbols: SymbolTable,
}

impl ExprContext {
    fn field(&self, key: &str, text: &str) -> Result<ScalarField, ScenarioError> {
        let expr = parse(text, self.n, &self.symbols).map_err(|err| ScenarioError::Expr {
            key: key.to_string(),
            err,
        })?;
        Ok(ScalarField::from_expr(self.n, expr))
    }

    fn vector(&self, key: &str, texts: &[String]) -> Result<Vec<ScalarField>, ScenarioError> {
        if texts.len() != self.n {
            return Err(invalid(
                key,
                format!("expected {} entries, found {}", self.n, texts.len()),
            ));
        }
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.field(&format!("{key}[{}]", i + 1), t))
            .collect()
    }

    fn matrix(&self, key: &str, texts: &[Vec<String>]) -> Result<Vec<Vec<ScalarField>>, ScenarioError> {
        if texts.len() != self.n {
            return Err(invalid(
                key,
                format!("expected {} rows, found {}", self.n, texts.len()),
            ));
        }
        texts
            .iter()
            .enumerate()
            .map(|(i, row)| self.vector(&format!("{key}[{}]", i + 1), row))
            .collect()
    }
}

fn build(name: String, file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let n = file.dimension;
    if n == 0 || n > 16 {
        return Err(invalid("dimension", "must be between 1 and 16"));
    }
    check_constant_names(&file.constants)?;
    let mut symbols = SymbolTable::new();
    for (k, v) in &file.constants {
        symbols.insert(k.clone(), *v);
    }
    let ctx = ExprContext { n, symbols };

    // region (defaults to the unit box)
    let region = match &file.region {
        None => Region::unit(n),
        Some(r) => {
            let ranges = |key: &str, v: &Option<Vec<[f64; 2]>>| -> Result<Vec<(f64, f64)>, ScenarioError> {
                match v {
                    None => Ok(vec![(-1.0, 1.0); n]),
                    Some(list) if list.len() == n => {
                        Ok(list.iter().map(|r| (r[0], r[1])).collect())
                    }
                    Some(list) => Err(invalid(
                        key,
                        format!("expected {} ranges, found {}", n, list.len()),
                    )),
                }
            };
            Region {
                time: r.t.map(|x| (x[0], x[1])).unwrap_or((-1.0, 1.0)),
                coords: ranges("region.q", &r.q)?,
                velocities: ranges("region.dq", &r.dq)?,
            }
        }
    };
    let quad_probes = region.jet_lattice(3);

    // system
    let (system_kind, xi, linear, lagrangian, frame_map): (
        &'static str,
        DynamicEquation,
        Option<LinearConnection>,
        Option<LagrangianCoefficients>,
        Option<FrameMap>,
    ) = match &file.system {
        SystemSection::Quadratic { a, b, f } => {
            let zero_cube = || vec![vec![vec!["0".to_string(); n]; n]; n];
            let zero_sq = || vec![vec!["0".to_string(); n]; n];
            let zero_v = || vec!["0".to_string(); n];
            let a_texts = a.clone().unwrap_or_else(zero_cube);
            if a_texts.len() != n {
                return Err(invalid(
                    "system.a",
                    format!("expected {} blocks, found {}", n, a_texts.len()),
                ));
            }
            let mut a_fields = Vec::with_capacity(n);
            for (i, block) in a_texts.iter().enumerate() {
                a_fields.push(ctx.matrix(&format!("system.a[{}]", i + 1), block)?);
            }
            let b_fields = ctx.matrix("system.b", &b.clone().unwrap_or_else(zero_sq))?;
            let f_fields = ctx.vector("system.f", &f.clone().unwrap_or_else(zero_v))?;
            let xi = DynamicEquation::quadratic(
                n,
                a_fields.clone(),
                b_fields.clone(),
                f_fields.clone(),
                &quad_probes,
            )
            .map_err(geometry("system"))?;
            let k = geoflow_core::linear_from_quadratic(n, &a_fields, &b_fields, &f_fields, &quad_probes)
                .map_err(geometry("system"))?;
            ("quadratic", xi, Some(k), None, None)
        }
        SystemSection::General { xi } => {
            let fields = ctx.vector("system.xi", xi)?;
            let eq = DynamicEquation::from_fields(n, fields).map_err(geometry("system.xi"))?;
            ("general", eq, None, None, None)
        }
        SystemSection::Lagrangian { m, k, f } => {
            let m_fields = ctx.matrix("system.m", m)?;
            let mass = MassMetric::new(n, m_fields).map_err(geometry("system.m"))?;
            mass.validate(&region.position_lattice(3))
                .map_err(geometry("system.m"))?;
            let k_texts = k.clone().unwrap_or_else(|| vec!["0".to_string(); n]);
            let k_fields = ctx.vector("system.k", &k_texts)?;
            let f_field = ctx.field("system.f", f.as_deref().unwrap_or("0"))?;
            let lag = LagrangianCoefficients::new(mass, k_fields, f_field)
                .map_err(geometry("system"))?;
            let xi = lagrangian_force_law(&lag).map_err(geometry("system"))?;
            let conn = lagrangian_connection(&lag).map_err(geometry("system"))?;
            ("lagrangian", xi, Some(conn), Some(lag), None)
        }
        SystemSection::FreeMotion { forward, inverse } => {
            let fwd = ctx.vector("system.forward", forward)?;
            let inv = ctx.vector("system.inverse", inverse)?;
            let map = FrameMap::new(n, fwd, inv).map_err(geometry("system"))?;
            map.validate(&region.position_lattice(3), 1e-9)
                .map_err(geometry("system"))?;
            let (xi, gamma) = free_motion_equation(&map).map_err(geometry("system"))?;
            let k = connection_from_gamma(&gamma).map_err(geometry("system"))?;
            ("free_motion", xi, Some(k), None, Some(map))
        }
    };
    let gamma = gamma_from_xi(&xi);

    // optional observer frame
    let frame = match &file.frame {
        None => None,
        Some(fr) => {
            let fields = ctx.vector("frame.gamma", &fr.gamma)?;
            Some(ReferenceFrame::new(n, fields).map_err(geometry("frame.gamma"))?)
        }
    };

    // optional mass metric for compatibility checks
    let (mass, mass_source) = match &file.mass {
        Some(sec) => {
            let fields = ctx.matrix("mass.m", &sec.m)?;
            let mm = MassMetric::new(n, fields).map_err(geometry("mass.m"))?;
            mm.validate(&region.position_lattice(3))
                .map_err(geometry("mass.m"))?;
            (Some(mm), "declared")
        }
        None => match &lagrangian {
            Some(l) => (Some(l.mass.clone()), "lagrangian"),
            None => (None, "none"),
        },
    };

    // initial conditions
    let initial = match &file.initial {
        None => None,
        Some(sec) => {
            if sec.q.len() != n {
                return Err(invalid(
                    "initial.q",
                    format!("expected {} entries, found {}", n, sec.q.len()),
                ));
            }
            if sec.dq.len() != n {
                return Err(invalid(
                    "initial.dq",
                    format!("expected {} entries, found {}", n, sec.dq.len()),
                ));
            }
            if !(sec.span[0].is_finite() && sec.span[1].is_finite()) || sec.span[0] == sec.span[1]
            {
                return Err(invalid("initial.span", "span must be a nondegenerate interval"));
            }
            Some(Initial {
                q: sec.q.clone(),
                dq: sec.dq.clone(),
                span: (sec.span[0], sec.span[1]),
            })
        }
    };

    // integrator
    let method = match file.integrator.method.as_str() {
        "rk45" => Method::Rk45,
        "rk4" => {
            let step = file
                .integrator
                .step
                .ok_or_else(|| invalid("integrator.step", "rk4 requires a fixed step"))?;
            Method::Rk4 { step }
        }
        other => {
            return Err(invalid(
                "integrator.method",
                format!("unknown method `{other}` (expected rk45 or rk4)"),
            ))
        }
    };
    let integrator = IntegratorConfig {
        method,
        abs_tol: file.integrator.abs_tol,
        rel_tol: file.integrator.rel_tol,
        max_step: file.integrator.max_step,
        ..IntegratorConfig::default()
    };
    integrator
        .validate()
        .map_err(|e| invalid("integrator", e.to_string()))?;
    if file.integrator.samples < 2 {
        return Err(invalid("integrator.samples", "need at least 2 samples"));
    }

    // Jacobi data
    let jacobi = match &file.jacobi {
        None => None,
        Some(sec) => {
            if sec.u0.len() != n || sec.w0.len() != n {
                return Err(invalid(
                    "jacobi",
                    format!("u0 and w0 must each have {n} entries"),
                ));
            }
            Some((sec.u0.clone(), sec.w0.clone()))
        }
    };

    // probe point
    let probe = match &file.probe {
        Some(p) => {
            if p.q.len() != n || p.dq.len() != n {
                return Err(invalid(
                    "probe",
                    format!("q and dq must each have {n} entries"),
                ));
            }
            JetPoint::new(p.t, &p.q, &p.dq)
        }
        None => match &initial {
            Some(init) => JetPoint::new(init.span.0, &init.q, &init.dq),
            None => JetPoint::new(0.0, &vec![0.0; n], &vec![0.0; n]),
        },
    };

    // tasks
    if file.tasks.is_empty() {
        return Err(invalid("tasks", "at least one task is required"));
    }
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for (idx, text) in file.tasks.iter().enumerate() {
        let task = Task::parse(text).ok_or_else(|| {
            invalid(
                &format!("tasks[{idx}]"),
                format!(
                    "unknown task `{text}` (expected convert, geodesic, jacobi, conjugate, \
                     curvature, check:flat, check:symmetric or check:compat)"
                ),
            )
        })?;
        tasks.push(task);
    }

    // per-task prerequisites
    for task in &tasks {
        match task {
            Task::Geodesic | Task::Conjugate if initial.is_none() => {
                return Err(invalid(
                    "initial",
                    format!("task `{}` needs an [initial] section", task.name()),
                ));
            }
            Task::Jacobi => {
                if initial.is_none() {
                    return Err(invalid("initial", "task `jacobi` needs an [initial] section"));
                }
                if jacobi.is_none() {
                    return Err(invalid("jacobi", "task `jacobi` needs a [jacobi] section"));
                }
                if linear.is_none() {
                    return Err(invalid(
                        "system",
                        "task `jacobi` needs a quadratic, lagrangian or free_motion system",
                    ));
                }
            }
            Task::Conjugate | Task::Curvature | Task::CheckFlat if linear.is_none() => {
                return Err(invalid(
                    "system",
                    format!(
                        "task `{}` needs a quadratic, lagrangian or free_motion system",
                        task.name()
                    ),
                ));
            }
            _ => {}
        }
    }

    Ok(Scenario {
        name,
        n,
        system_kind,
        xi,
        gamma,
        linear,
        lagrangian,
        frame_map,
        frame,
        mass,
        mass_source,
        initial,
        integrator,
        samples: file.integrator.samples,
        jacobi,
        region,
        probe,
        tasks,
    })
}
