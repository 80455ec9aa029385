use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or parameters supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed input line in a ratings file.
    #[error("parse error at line {line}: {message} (`{content}`)")]
    Parse {
        line: usize,
        content: String,
        message: String,
    },

    /// Input data that is well formed but unusable (empty, inconsistent).
    #[error("data error: {0}")]
    Data(String),

    /// A Cholesky factorization failed. `minor` is the order of the first
    /// leading minor that was not positive.
    #[error("matrix not positive definite (leading minor {minor}){}", context_suffix(.context))]
    NotPositiveDefinite { minor: usize, context: Option<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" in {c}"),
        None => String::new(),
    }
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attach a location (block, row) to a factorization failure.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::NotPositiveDefinite { minor, .. } => Error::NotPositiveDefinite {
                minor,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Json(_) => 2,
            Error::NotPositiveDefinite { .. } => 3,
        }
    }
}
