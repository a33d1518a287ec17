use thiserror::Error;

/// Errors raised by the OQBM numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("regime precondition not met: {0}")]
    Regime(String),

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("principal value did not converge: estimates {estimates:?}, residuals {residuals:?}")]
    PrincipalValue {
        estimates: Vec<f64>,
        residuals: Vec<f64>,
    },

    #[error(
        "adaptive quadrature failed to reach tolerance on [{a}, {b}] (error estimate {error:e})"
    )]
    Quadrature { a: f64, b: f64, error: f64 },

    #[error("time step {dt:e} exceeds stable bound {max_dt:e} ({binding})")]
    Unstable {
        dt: f64,
        max_dt: f64,
        binding: String,
    },

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("moment hierarchy diverged at t = {t}: norm {norm:e} exceeds bound {bound:e} (spectral bound {spectral_bound:e})")]
    MomentBlowUp {
        t: f64,
        norm: f64,
        bound: f64,
        spectral_bound: f64,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("superoperator expansion disagrees with direct matrix arithmetic by {0:e}")]
    OracleMismatch(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
