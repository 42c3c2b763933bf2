use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh too small: nx={nx}, ny={ny} (need nx >= 4 and ny >= 2)")]
    DimensionTooSmall { nx: usize, ny: usize },

    #[error("bump height {0} outside [0, 0.5)")]
    InvalidBump(f64),

    #[error("degenerate cell {cell}: volume {volume:e}")]
    DegenerateCell { cell: usize, volume: f64 },

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("non-physical state{}: density {density:e}, pressure {pressure:e}", cell.map(|c| format!(" in cell {c}")).unwrap_or_default())]
    NonPhysical {
        cell: Option<usize>,
        density: f64,
        pressure: f64,
    },

    #[error("empty residual vector")]
    EmptyVector,

    #[error("invalid tree path of length {len} (tree depth {depth})")]
    InvalidPath { len: usize, depth: usize },

    #[error("leaf {leaf} is padding and cannot be written (logical length {len})")]
    PaddingWrite { leaf: usize, len: usize },

    #[error("residual is identically zero")]
    ZeroResidual,

    #[error("singular diagonal block at cell {cell}")]
    SingularBlock { cell: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("block-inverse cache was built from a different Jacobian")]
    StaleCache,

    #[error("linear solver stopped after {iterations} iterations at relative residual {relative_residual:e}")]
    SolverNotConverged {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("linear solver recurrence broke down twice (iteration {iteration})")]
    SolverBreakdown { iteration: usize },

    #[error("eigenvalue estimate did not converge after {iterations} iterations (best estimate {estimate:e})")]
    EigenNotConverged { iterations: usize, estimate: f64 },

    #[error("input vector is not normalized (norm {norm})")]
    Unnormalized { norm: f64 },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("insufficient data for fit: {0}")]
    InsufficientData(String),

    #[error("sum tree out of sync with state: relative root error {relative_error:e}")]
    TreeInconsistent { relative_error: f64 },

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("step {iteration}: {source}")]
    StepFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
