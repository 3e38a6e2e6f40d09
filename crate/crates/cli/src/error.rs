use std::path::{Path, PathBuf};

use serde::Serialize;

use bbscore::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: bbscore::Error,
    },

    #[error(transparent)]
    Core(#[from] bbscore::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, source: bbscore::Error) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.class() {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) | CliError::Config(_) => ErrorClass::Usage,
            CliError::Io { .. } => ErrorClass::Data,
            CliError::Input { source, .. } | CliError::Core(source) => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }

    /// Single-line JSON description for standard error.
    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: Body<'a>,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Report {
            error: Body {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message: self.to_string(),
            },
        })
        .expect("error report serializes")
    }
}
