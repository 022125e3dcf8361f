use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("resonant spectrum: Lyapunov system is singular")]
    ResonantSpectrum,
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("closed-loop matrix is not Hurwitz at iteration {0}")]
    NotHurwitz(usize),
    #[error("policy evaluation diverged at iteration {iteration}: residual rms grew from {previous:e} to {current:e}")]
    PolicyEvaluationDiverged {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("linearization check failed: {0}")]
    LinearizationMismatch(String),
    #[error("relu activation is not twice differentiable")]
    ReluSecondDerivative,
    #[error("numerical blowup at step {0}")]
    NumericalBlowup(usize),
    #[error("uncontrollable pair: {0}")]
    Uncontrollable(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
