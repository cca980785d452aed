//! Geometric machinery for second-order dynamics on a time-fibred configuration
//! space: every force law `q''^i = xi^i(t, q, q')` is realised as the geodesic
//! flow of a connection on the tangent bundle, and the usual differential
//! geometric toolbox (curvature, Jacobi fields, conjugate points, index form)
//! is made available for it.
//!
//! Index conventions used throughout the crate:
//!
//! * Greek-style indices run over `0..=n` with slot `0` reserved for time
//!   (`q^0 = t`); spatial indices run over `1..=n`.
//! * Component arrays are always sized `n + 1`, even when the temporal row is
//!   identically zero. Velocity arrays carry `v[0] = dq^0/dt`, which equals 1
//!   on jet evaluations.
//! * Connections on the tangent bundle are stored as `K[lambda][alpha][beta]`
//!   (linear case) with the geodesic equation `q''^alpha = K_lambda^alpha_beta
//!   q'^lambda q'^beta`, time held exactly (`q^0 = t`, `q'^0 = 1`).
//!
//! The crate is `no_std` (alloc required); IO, file formats and the command
//! line live in the companion `geoflow-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chart;
pub mod connection;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod field;
pub mod geodesic;
pub mod linalg;
pub mod newtonian;
pub mod ode;
pub mod tensor;

pub use chart::FrameMap;
pub use connection::{
    apply_soldering, connection_from_gamma, constrained_force_law, curvature,
    free_motion_connection, free_motion_equation, is_flat, linear_from_quadratic,
    linear_from_quadratic_form, max_abs_curvature, transform_connection, xi_from_connection,
    Curvature, GeneralConnection, LinearConnection, SolderingForm, TangentConnection,
};
pub use dynamics::{
    gamma_from_xi, lift_conservative, xi_from_gamma, DynamicConnection, DynamicEquation,
    QuadraticForm, ReferenceFrame,
};
pub use error::{EvalError, EvalErrorKind, GeometryError, OdeError, ParseError, TensorError};
pub use expr::{parse, Expr, SymbolTable};
pub use field::{fd_partial, JetPoint, Region, ScalarField, Slot};
pub use geodesic::{
    find_conjugate_points, index_form_of_field, index_form_of_trajectory,
    integrate_connection_geodesic, integrate_geodesic, integrate_jacobi, sectional_scalar,
    ConjugatePoint, GeodesicSource, GeodesicTrajectory, JacobiTrajectory,
};
pub use newtonian::{
    christoffel, compatibility_residual, extend_mass_metric, lagrange_acceleration,
    lagrangian_connection, lagrangian_force_law, metric_from_lagrangian, LagrangianCoefficients,
    MassMetric, TangentMetric,
};
pub use ode::{IntegratorConfig, Method, OdeSolution};
pub use tensor::{ChartPoint, TangentVector, Tensor, Variance};
