use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid pool: extent {extent} is not divisible by factor {factor}")]
    InvalidPool { extent: usize, factor: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no poses associated within {max_dt} s")]
    EmptyAssociation { max_dt: f64 },

    /// Invalid configuration; `keys` names the offending entries.
    #[error("config error [{}]: {reason}", keys.join(", "))]
    Config { keys: Vec<String>, reason: String },

    #[error("missing prerequisite: {0}")]
    Dependency(String),

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(keys: &[&str], reason: impl Into<String>) -> Self {
        Error::Config {
            keys: keys.iter().map(|k| k.to_string()).collect(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
