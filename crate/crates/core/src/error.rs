//! Crate-wide error taxonomy.
//!
//! Library operations return [`Error`]. Gateway transport details live in
//! [`GatewayError`] so callers can tell retryable transport trouble apart from
//! provider capability or integrity problems when mapping failures to process
//! exit codes.

use std::path::PathBuf;

/// Errors raised by gateway backends (HTTP or mock).
#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    /// Network-level failure that persisted through the retry budget.
    #[error("transport failure after {retries} retries: {message}")]
    Transport { message: String, retries: u32 },
    /// Endpoint answered with a non-2xx status that retries cannot fix.
    #[error("endpoint returned status {status} (body sha256 {body_sha256})")]
    Status { status: u16, body_sha256: String },
    /// The provider cannot do what the run requires (e.g. no logprobs).
    #[error("capability: {0}")]
    Capability(String),
    /// A response arrived but could not be interpreted.
    #[error("malformed payload: {0}")]
    Malformed(String),
    /// A response contradicts an invariant established earlier in the run.
    #[error("integrity: {0}")]
    Integrity(String),
    /// Strict fixture-backed mock had no entry for the request.
    #[error("fixture has no entry for {0}")]
    MissingFixture(String),
    /// The request violates a gateway precondition (e.g. empty embed text).
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// True when retrying the same call later could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }

    /// True when the provider lacks a required capability.
    pub fn is_capability(&self) -> bool {
        matches!(self, GatewayError::Capability(_))
    }
}

/// Failure while evaluating a single individual.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    /// Transient failure; the generation can be retried from a checkpoint.
    #[error("retryable evaluation failure: {0}")]
    Retryable(#[source] GatewayError),
    /// Permanent failure; retrying the same call will not help.
    #[error("evaluation failure: {0}")]
    Fatal(#[source] GatewayError),
    /// Gateway answered, but no score could be derived from the payload.
    #[error("scoring error: {0}")]
    Scoring(String),
}

impl From<GatewayError> for EvalError {
    fn from(e: GatewayError) -> Self {
        if e.is_retryable() {
            EvalError::Retryable(e)
        } else {
            EvalError::Fatal(e)
        }
    }
}

/// Top-level error type for the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data is empty or degenerate in a way no computation can fix.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// A configuration value is missing, unknown, or out of range.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric score could not be produced from otherwise valid data.
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    /// Evaluation of one individual failed; the generation did not advance.
    #[error("evaluation of individual {individual} failed: {source}")]
    Evaluation {
        individual: u64,
        #[source]
        source: EvalError,
    },
    /// A run stopped early but left a checkpoint to continue from.
    #[error("run interrupted ({source}); resume from {}", checkpoint.display())]
    Interrupted {
        checkpoint: PathBuf,
        #[source]
        source: Box<Error>,
    },
    /// Checkpoint integrity problem (digest mismatch, truncated file, ...).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an I/O error with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to:
    /// 2 config error, 3 resumable interruption, 4 gateway capability error,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Interrupted { source, .. } => {
                if source.exit_code() == 4 {
                    4
                } else {
                    3
                }
            }
            Error::Gateway(g) if g.is_capability() => 4,
            Error::Evaluation { source, .. } => match source {
                EvalError::Retryable(_) => 3,
                EvalError::Fatal(g) if g.is_capability() => 4,
                _ => 1,
            },
            _ => 1,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
