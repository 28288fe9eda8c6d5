//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid grid: {why}")]
    InvalidGrid { why: String },
    #[error("invalid class data: {why}")]
    InvalidClass { why: String },
    #[error("initial metric not positive at node ({i},{j}): det={det:.3e}, ff={ff:.3e}")]
    NonPositiveInitialMetric { i: usize, j: usize, det: f64, ff: f64 },
}

#[derive(Debug, Error)]
pub enum CohomologyError {
    #[error("time {t} outside [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },
    #[error("volume form normalization failed: integral = {integral}")]
    NormalizationFailure { integral: f64 },
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("Kahler positivity lost at node ({i},{j}), t={t:.6}: det={det:.3e}, ff={ff:.3e}")]
    PositivityLoss { i: usize, j: usize, t: f64, det: f64, ff: f64 },
    #[error("step size underflow at t={t:.12}: dt={dt:.3e}")]
    StepSizeUnderflow { t: f64, dt: f64 },
    #[error("max step count {max_steps} exceeded at t={t:.6}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },
    #[error("non-finite potential at t={t:.6}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Error)]
pub enum EllipticError {
    #[error("right-hand side has non-zero fibre mass {mass:.3e} (tolerance {tol:.1e})")]
    NonZeroMass { mass: f64, tol: f64 },
    #[error("Newton diverged after {iterations} iterations; residual trace {trace:?}")]
    NewtonDivergence { iterations: usize, trace: Vec<f64> },
    #[error("metric positivity lost during Newton iteration {iteration}")]
    PositivityLoss { iteration: usize },
    #[error("linear solve failed in {context}")]
    LinearSolve { context: String },
}

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("fit window spans only {decades:.2} decades (need >= {need:.2})")]
    InsufficientWindow { decades: f64, need: f64 },
    #[error("series `{name}` missing from bundle")]
    MissingSeries { name: String },
    #[error("no admissible A in [{lo:.1e}, {hi:.1e}] gives A E <= v <= 3 A E (need A = {required:.3e})")]
    VPositivityFailure { lo: f64, hi: f64, required: f64 },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cohomology(#[from] CohomologyError),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error("snapshot io: {0}")]
    SnapshotIo(String),
}
