use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("no convergence after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate design: all x values are equal")]
    DegenerateDesign,

    #[error("insufficient replicates: need at least 2 per level, got {0}")]
    InsufficientReplicates(usize),

    #[error("insufficient levels: need at least 2, got {0}")]
    InsufficientLevels(usize),

    #[error("nonpositive {what} at level {level}, replicate {replicate}: {value}")]
    NonpositiveObservable {
        what: &'static str,
        level: usize,
        replicate: usize,
        value: f64,
    },

    #[error("isotherm rejected: {0}")]
    RejectedIsotherm(String),

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Bracket { .. }
                | Error::Convergence { .. }
                | Error::DegenerateDesign
                | Error::DegenerateSystem(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse {
                line,
                message: e.to_string(),
            },
        }
    }
}
