use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the VU calculus.
#[derive(Debug, Clone, Error)]
pub enum VuError {
    #[error("non-finite entry in input matrix or vector")]
    NonFiniteInput,

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("V-basis columns are linearly dependent (rank {rank} of {cols})")]
    RankDeficientVBar { rank: usize, cols: usize },

    #[error("subdifferential generator count {count} exceeds budget {budget}")]
    GeneratorBudgetExceeded { count: usize, budget: usize },

    #[error("PDG structure is inconsistent at the point: {0}")]
    PdgInconsistent(String),

    #[error("inner map is not transversal to the active manifold")]
    TransversalityViolated { witness: DVector<f64> },

    #[error("no horizon subdifferential information attached to the model")]
    MissingHorizonInfo,

    #[error("sum rule qualification fails: normal cones are not in direct sum")]
    SumRuleConditionViolated,

    #[error("active subfunction gradients are affinely dependent (rank {rank} of {needed})")]
    AffineDependence { rank: usize, needed: usize },

    #[error("Newton iteration diverged after {iters} iterations (residual {residual:e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("Newton system matrix V(u)^T V is singular")]
    SingularNewtonJacobian,

    #[error("V(u)^T V is singular")]
    SingularVtV,

    #[error("only {accepted} of {drawn} samples were off the kink set")]
    InsufficientSamples { accepted: usize, drawn: usize },

    #[error("fast track requires dim V >= 1 and dim U >= 1 (got dim V = {dim_v}, dim U = {dim_u})")]
    TrackDimensions { dim_u: usize, dim_v: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, VuError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(VuError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
