use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Dimensions or layouts that do not agree with each other.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot pair error reports: {0}")]
    Pairing(String),
    #[error("degenerate blend: every activation is below {0:e}")]
    DegenerateBlend(f64),
    #[error("data generation failed: {0}")]
    Generation(String),
    #[error("unsupported schema version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("NaN contamination in {0}")]
    NaN(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Pairing(_) => 2,
            Error::Numerical(_) | Error::DegenerateBlend(_) => 4,
            Error::Schema(_)
            | Error::Generation(_)
            | Error::Version { .. }
            | Error::NaN(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
        }
    }
}
