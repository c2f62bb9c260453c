use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("measurement matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    /// Distinct simplex vertices project onto the same point, so a denominator row vanishes.
    #[error("degenerate configuration: colliding vertex projections {pairs:?}")]
    DegenerateConfiguration { pairs: Vec<(usize, usize)> },

    #[error("unhandled pole structure in layer {layer}: {detail}")]
    UnhandledPoleOrder { layer: usize, detail: String },

    #[error("zero denominator entry in the final Laplace dimension")]
    ZeroColumnEntry,

    #[error("the intersection polytope is empty for this measurement")]
    EmptyPolytope,

    #[error("measurement t is infeasible (no point of the simplex maps to it)")]
    InfeasibleT,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    ConvergenceFailure { residual: f64, iterations: usize },

    #[error("network document schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("corrupt network document: {0}")]
    CorruptDocument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
