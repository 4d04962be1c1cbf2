use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("row {row}, column {column} ('{name}'): {message}")]
    Parse { row: usize, column: usize, name: String, message: String },

    #[error("{0}")]
    Role(String),

    #[error("{0}")]
    Fetch(String),

    #[error("{0}")]
    Digest(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: mie_core::Error,
    },
}

impl CliError {
    pub fn io(path: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_string(), message: e.to_string() }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Role(_) => "role",
            CliError::Fetch(_) => "fetch",
            CliError::Digest(_) => "digest",
            CliError::Core { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "io" => 3,
            "parse" => 4,
            "role" => 5,
            "data" => 6,
            "fit" => 7,
            "domain" => 8,
            "estimate" => 9,
            "inference" => 10,
            "spec" => 11,
            "fetch" => 12,
            "digest" => 13,
            _ => 1,
        }
    }

    /// `error[<class>]: <message>` with newlines flattened.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.class(), msg)
    }
}

/// Adds command context to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, mie_core::Error> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}
