use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank-deficient regressor at timestep {timestep}; raise the regularization above zero")]
    RankDeficient { timestep: usize },

    #[error("timestep {timestep} out of range for horizon {horizon}")]
    TimestepOutOfRange { timestep: usize, horizon: usize },

    #[error("Q_uu stayed indefinite at timestep {timestep} after regularization reached {mu:e}")]
    IndefiniteQuu { timestep: usize, mu: f64 },

    #[error("dual variable exceeded {cap:e} without satisfying the KL bound (kl={kl:.6e}, epsilon={epsilon:.6e})")]
    DualDiverged { cap: f64, kl: f64, epsilon: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
