use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("CG requested on a matrix not flagged SPD")]
    InvalidSolverChoice,

    #[error("solver diverged: relative residual {residual:.3e} after {iterations} iterations{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    SolverDiverged {
        residual: f64,
        iterations: usize,
        context: Option<String>,
    },

    #[error("requested {requested} modes but numerical rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("RBF system ill-conditioned (estimate {estimate:.3e}); consider raising the ridge parameter")]
    IllConditioned { estimate: f64 },

    #[error("RBF fit needs at least 2 distinct centers, got {0}")]
    InsufficientCenters(usize),

    #[error("duplicate RBF center at index {0}")]
    DuplicateCenter(usize),

    #[error("singular reduced system in online step {step}")]
    SingularReducedSystem { step: &'static str },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("incompatible artifacts: {0}")]
    IncompatibleArtifacts(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code per the CLI contract: 2 validation, 3 numerical, 4 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SolverDiverged { .. }
            | Error::SingularReducedSystem { .. }
            | Error::IllConditioned { .. }
            | Error::RankExceeded { .. } => 3,
            Error::MissingArtifact(_) => 4,
            _ => 2,
        }
    }
}
