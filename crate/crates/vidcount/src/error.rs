use std::path::{Path, PathBuf};

use vidcount_core::Error as CoreError;

/// Failure of a file-format routine or a command. Every variant maps to a
/// process exit code and a fixed single-word prefix.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with `context`, keeping the variant.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
            io @ CliError::Io { .. } => io,
        }
    }

    /// The message as printed by the binary: one line, `error[<kind>]: ...`.
    pub fn report(&self) -> String {
        let line = self.to_string().replace('\n', " ");
        let (kind, rest) = line.split_once(": ").unwrap_or(("error", &line));
        format!("error[{kind}]: {rest}")
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => CliError::Config(e.to_string()),
            CoreError::NonFinite(_) => CliError::Numeric(e.to_string()),
            CoreError::Domain { .. } | CoreError::NotScalar(_) | CoreError::NotOnTape => CliError::Numeric(e.to_string()),
            CoreError::Annotation { .. } | CoreError::Data(_) | CoreError::ShapeMismatch { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
