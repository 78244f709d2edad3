//! Error type shared by all solvers and analysis passes.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, NjError>;

#[derive(Debug, thiserror::Error)]
pub enum NjError {
    /// An input value was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The potential fails one of the structural hypotheses (symmetry,
    /// nondegenerate wells, radial coercivity).
    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    /// Descent ran out of iterations while the projected gradient was still
    /// too large to trust the state.
    #[error("no convergence: residual {residual:.3e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },

    /// The energy or the iterate became non-finite during descent.
    #[error("divergence at iteration {iteration}: energy became non-finite")]
    Divergence { iteration: usize },

    /// A geometric construction (marker schedule, interface cells, minimal
    /// curve) could not be completed.
    #[error("construction failed: {0}")]
    Construction(String),

    /// A fit or statistic was requested with too few usable samples.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A file did not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NjError {
    /// Process exit code used by the command-line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            NjError::NonFinite(_)
            | NjError::Parameter(_)
            | NjError::Hypothesis(_)
            | NjError::Format(_)
            | NjError::Io(_) => 2,
            NjError::Convergence { .. } | NjError::Divergence { .. } => 3,
            NjError::Construction(_) => 4,
            NjError::InsufficientData(_) => 5,
        }
    }
}
