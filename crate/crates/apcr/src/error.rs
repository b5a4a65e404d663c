use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate rank: {0}")]
    DegenerateRank(String),
    #[error("degenerate singular gap: {0}")]
    DegenerateGap(String),
    #[error("no data for action {0}")]
    NoData(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Malformed(e.to_string()),
        }
    }
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateRank(_) => "degenerate_rank",
            Error::DegenerateGap(_) => "degenerate_gap",
            Error::NoData(_) => "no_data",
            Error::Config(_) => "config",
            Error::AssumptionViolated(_) => "assumption_violated",
            Error::Malformed(_) => "malformed",
            Error::Schema(_) => "schema",
            Error::IncompleteTrace(_) => "incomplete_trace",
            Error::Io(_) => "io",
        }
    }
}
