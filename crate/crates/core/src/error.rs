//! Error types shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

/// What went wrong while evaluating an expression or scalar field.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a non-positive value")]
    LogDomain,
    #[error("square root of a negative value")]
    SqrtDomain,
    #[error("power outside the real domain")]
    PowDomain,
    #[error("result is not finite")]
    NonFinite,
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("singular matrix")]
    SingularMatrix,
}

/// Evaluation failure carrying the offending binding (position and velocity
/// slots, index 0 = time).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at t={:?}, q={:?}, dq={:?}", .pos.first(), &.pos[1.min(.pos.len())..], .vel)]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

impl EvalError {
    pub fn new(kind: EvalErrorKind, pos: &[f64], vel: &[f64]) -> Self {
        EvalError {
            kind,
            pos: pos.into(),
            vel: vel.into(),
        }
    }
}

/// Syntax error with the byte offset into the source text and a description
/// of what would have been accepted there.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at offset {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character `{found}`, expected {expected}")]
    UnexpectedChar { found: char, expected: &'static str },
    #[error("unexpected end of input, expected {expected}")]
    UnexpectedEnd { expected: &'static str },
    #[error("trailing input, expected end of expression or an operator")]
    TrailingInput,
    #[error("invalid numeric literal `{0}`")]
    InvalidNumber(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("variable `{name}` is out of range for dimension {dim}")]
    IndexOutOfRange { name: String, dim: usize },
}

/// Shape or variance misuse on dense tensors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("contraction slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("contraction requires one covariant and one contravariant slot")]
    VarianceMismatch,
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
}

/// Failure during numerical integration; the last good state is preserved.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64, state: Vec<f64> },
    #[error("state became non-finite at t={t}")]
    NonFiniteState { t: f64, state: Vec<f64> },
    #[error("exceeded {max_steps} steps at t={t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("invalid integrator configuration: {0}")]
    BadConfig(&'static str),
    #[error("degenerate time span")]
    DegenerateSpan,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Contract violations and numeric failures raised by the geometry layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: &'static str,
    },
    #[error("field depends on velocities where a velocity-independent field is required")]
    VelocityDependent,
    #[error("field depends on time where a time-independent field is required")]
    TimeDependent,
    #[error("coefficients are not symmetric in their lower indices (max deviation {max_dev})")]
    AsymmetricCoefficients { max_dev: f64 },
    #[error("dynamic connection has no affine form")]
    NonAffine,
    #[error("connection has non-vanishing temporal components")]
    NotTilde,
    #[error("connection is not linear")]
    NotLinear,
    #[error("frame map has a singular spatial Jacobian at the probed point")]
    SingularFrame { pos: Vec<f64> },
    #[error("frame map round trip off by {max_dev}, beyond tolerance {tol}")]
    FrameRoundTrip { max_dev: f64, tol: f64 },
    #[error("mass metric is singular or not positive-definite at a probed point")]
    MassMetricNotPositive { pos: Vec<f64> },
    #[error("trajectory was not integrated against this connection")]
    SourceMismatch,
    #[error("quadrature failed to converge to {tol} (best estimate error {err})")]
    QuadratureNonConvergence { tol: f64, err: f64 },
    #[error("non-finite input value")]
    NonFiniteInput,
}
