use thiserror::Error;

/// Errors produced by region validation, the solvers, and the samplers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The instance data is malformed (ordering, shape, or support problems).
    #[error("invalid region spec: {0}")]
    InvalidSpec(String),

    /// No strictly positive mass assignment with the prescribed marginals
    /// exists on the given support.
    #[error("degenerate region data: {0}")]
    Degenerate(String),

    /// Iteration budget exhausted before the residual target was met.
    #[error("scaling iteration did not converge within {max_iter} iterations (residual {residual:.3e})")]
    NotConverged { max_iter: usize, residual: f64 },

    /// A row or column rescaling hit a zero denominator.
    #[error("non-positive denominator in scaling update for {axis} {index}")]
    NonPositiveDenominator { axis: &'static str, index: usize },

    /// The support array is not reducible, so the exact recursive solver
    /// does not apply.
    #[error("support array is not simple")]
    NotSimple,

    /// The algebraic solvers require r != 0; use the scaling solver instead.
    #[error("r = 0: use the iterative scaling solver for this rate")]
    RZero,

    /// Numerical continuation left the basin of the tracked branch.
    #[error("continuation step failed past r = {last_good_r} (target {target_r}): {reason}")]
    StepBlowup {
        last_good_r: f64,
        target_r: f64,
        reason: String,
    },

    /// Neither or both roots of the branch equation produce positive masses.
    #[error("ambiguous branch selection: {0}")]
    AmbiguousBranch(String),

    /// The rational density has a denominator zero inside a rectangle.
    #[error("denominator vanishes on rectangle ({u},{v})")]
    PoleOnRectangle { u: usize, v: usize },

    /// A mass query left the rectangle it was addressed to.
    #[error("query box [{x1},{x2}]x[{y1},{y2}] is not contained in rectangle ({u},{v})")]
    OutOfRectangle {
        u: usize,
        v: usize,
        x1: f64,
        x2: f64,
        y1: f64,
        y2: f64,
    },

    /// The discrete region admits no restricted permutation.
    #[error("no restricted permutation exists for n = {n}")]
    Infeasible { n: usize },

    /// A gauge change required three distinct anchor values.
    #[error("cannot build Moebius map: {0}")]
    DegenerateMoebius(String),

    /// Input file or serialized object could not be read.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
