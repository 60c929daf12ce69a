use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing {what} at {}; run `polypaug {producer}` first", path.display())]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },
    #[error("generation aborted: {failed} of {attempted} requests failed (limit {limit:.1}%)")]
    FailureRateExceeded {
        failed: usize,
        attempted: usize,
        limit: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] polypaug_core::Error),
    #[error(transparent)]
    Refiner(#[from] polypaug_refiner::RefinerError),
    #[error(transparent)]
    Review(#[from] polypaug_review::ReviewError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit code: 1 for problems the user can fix in config or invocation
/// order, 2 for the environment (filesystem, network, failing backend).
pub fn exit_code(err: &CliError) -> i32 {
    use polypaug_core::Error as C;
    use polypaug_refiner::RefinerError as R;
    use polypaug_review::ReviewError as V;
    let env = match err {
        CliError::Config(_) | CliError::MissingArtifact { .. } | CliError::Json(_) => false,
        CliError::FailureRateExceeded { .. } | CliError::Io { .. } => true,
        CliError::Core(e) => matches!(e, C::Io { .. } | C::Image { .. } | C::BackendUnavailable(_)),
        CliError::Refiner(e) => match e {
            R::Io { .. } | R::NonFiniteLoss { .. } => true,
            R::Core(c) => matches!(c, C::Io { .. } | C::Image { .. }),
            _ => false,
        },
        CliError::Review(e) => matches!(e, V::Io { .. } | V::CorruptStore { .. }),
    };
    if env {
        2
    } else {
        1
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fails with a pointer to the producing subcommand when `path` is absent.
pub(crate) fn require(path: &Path, what: &'static str, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            what,
            path: path.to_path_buf(),
            producer,
        })
    }
}
