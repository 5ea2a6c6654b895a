use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state encountered at step {step}")]
    Divergence { step: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDivergence { epoch: usize, loss: f64 },

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("kinematic lock: |sin(theta1)| * r / l = {ratio} exceeds 1")]
    KinematicLock { ratio: f64 },

    #[error("constraint projection did not converge at step {step} (residual {residual:e})")]
    Drift { step: usize, residual: f64 },

    #[error("closed loop became unstable at step {step}: |theta| = {theta}")]
    Instability { step: usize, theta: f64 },

    #[error("ill-conditioned Riccati step at stage {stage}")]
    Conditioning { stage: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for numerical failures (divergence, instability) as opposed to
    /// bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::TrainingDivergence { .. }
                | Error::Drift { .. }
                | Error::Instability { .. }
                | Error::Conditioning { .. }
                | Error::SingularConfiguration(_)
                | Error::KinematicLock { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite values")))
    }
}
