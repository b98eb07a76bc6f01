use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("atoms {0} and {1} are coincident")]
    Coincident(usize, usize),

    #[error("position sampling failed after {0} attempts")]
    SamplingFailed(usize),

    #[error("ill-conditioned linear system (rcond = {0:.3e})")]
    IllConditioned(f64),

    #[error("resonant singularity (rcond = {rcond:.3e}); nearest eigenvalue of H + δH is {eigenvalue}")]
    Resonant { rcond: f64, eigenvalue: num_complex::Complex64 },

    #[error("Bragg resonance: reciprocal vector ({0:.6}, {1:.6}) lies on the light cone")]
    BraggResonance(f64, f64),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("perfect-reflection singularity: |1 + r| = {0:.3e}")]
    PerfectReflection(f64),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned(_)
                | Error::Resonant { .. }
                | Error::BraggResonance(..)
                | Error::Integration(_)
                | Error::NotConverged(_)
                | Error::PerfectReflection(_)
                | Error::Linalg(_)
                | Error::SamplingFailed(_)
        )
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
