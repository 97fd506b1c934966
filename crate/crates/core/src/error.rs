use thiserror::Error;

/// Errors raised by the library. The CLI maps [`Error::is_numerical`] to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain: {0}")]
    Domain(String),
    #[error("design: {0}")]
    Design(String),
    #[error("model not identifiable: {0}")]
    Identifiability(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("input: {0}")]
    Input(String),
    #[error("correlation matrix not positive definite at theta = {theta:e} (pivot {pivot:e} at row {index})")]
    NotPositiveDefinite { theta: f64, index: usize, pivot: f64 },
    #[error("numerical consistency: {0}")]
    Numerical(String),
    #[error("degenerate observations: {0}")]
    DegenerateObservation(String),
    #[error("quadrature: {0}")]
    Quadrature(String),
    #[error("ambiguous rank: {0}")]
    AmbiguousRank(String),
    /// The posterior mass does not decay at an end of the θ range.
    #[error("suspected improper posterior: {0}")]
    Impropriety(String),
    /// A checked inequality failed beyond its tolerance.
    #[error("bound violated: {0}")]
    BoundViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for violations of a numerical contract, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Numerical(_)
                | Error::DegenerateObservation(_)
                | Error::Quadrature(_)
                | Error::AmbiguousRank(_)
                | Error::Impropriety(_)
                | Error::BoundViolation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
