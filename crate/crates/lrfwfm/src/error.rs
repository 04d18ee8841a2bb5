use thiserror::Error;

/// Errors produced by the library.
///
/// `Data` and `Format` cover bad inputs (files, rows, vocabularies); the
/// remaining variants are numeric failures. The CLI maps the two groups to
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {max_asym:e} exceeds {tol:e})")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad input data or malformed files.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Data(_) | Error::Format(_) | Error::Io(_))
    }
}
