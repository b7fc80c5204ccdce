use thiserror::Error;

/// Errors produced by kernel evaluation, lattice operators, and solvers.
#[derive(Error, Debug)]
pub enum BtpError {
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quadrature or iteration failed to reach the requested tolerance.
    #[error("convergence failure: achieved {achieved:.3e}, required {required:.3e}")]
    Convergence { achieved: f64, required: f64 },

    /// The operation requires a Lipschitz diffusion coefficient.
    #[error("diffusion coefficient `{0}` has no Lipschitz constant; use the dyadic Euler solver instead")]
    NonLipschitz(String),

    /// Fixed-point iteration exhausted its budget; carries the residual
    /// sequence for diagnosis.
    #[error("Picard iteration did not converge; last residual {:.3e}", residuals.last().copied().unwrap_or(f64::NAN))]
    PicardNoConvergence { residuals: Vec<f64> },

    /// Problem size exceeds what the dense algorithms are meant for.
    #[error("resource limit: {0}")]
    Resource(String),

    /// Malformed configuration or usage.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BtpError>;

impl BtpError {
    pub fn domain(msg: impl Into<String>) -> Self {
        BtpError::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        BtpError::Invalid(msg.into())
    }

    /// Process exit code convention: 2 usage/domain, 3 non-convergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BtpError::Domain(_) | BtpError::Invalid(_) => 2,
            BtpError::Convergence { .. } | BtpError::PicardNoConvergence { .. } => 3,
            _ => 1,
        }
    }
}
