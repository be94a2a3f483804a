use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {what} expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("regressor has zero energy (pilots of user {user} are all zero?)")]
    DegenerateRegressor { user: usize },

    #[error("pilots have zero total power")]
    DegeneratePilots,

    #[error("pilots of user {user} are not isotropic (relative deviation {deviation:.3e})")]
    NonIsotropicPilots { user: usize, deviation: f64 },

    #[error("unknown path id {0}")]
    UnknownPath(usize),

    #[error("path {0} must be detached from the residual for this operation")]
    PathAttached(usize),

    #[error("derivative series is identically zero")]
    FlatDerivative,

    #[error("eigenvalue iteration did not converge (order {order})")]
    EigenNoConvergence { order: usize },

    #[error("model order {requested} exceeds the {stored} stored paths of user {user}")]
    ModelOrderTooLarge {
        user: usize,
        requested: usize,
        stored: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml decode: {0}")]
    TomlDecode(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlEncode(#[from] toml::ser::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
