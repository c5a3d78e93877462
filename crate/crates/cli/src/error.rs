use std::path::{Path, PathBuf};

/// Every failure a command can report.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] capsdbn_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}: {detail}")]
    ConfigSyntax { origin: String, line: usize, detail: String },
    #[error("{}:{line}: {detail}", path.display())]
    Manifest { path: PathBuf, line: usize, detail: String },
    #[error("{}: {detail}", path.display())]
    Image { path: PathBuf, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("archive: {0}")]
    Archive(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// Short stable identifier printed with the error.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(capsdbn_core::Error::Config(_)) | Self::ConfigSyntax { .. } => "config",
            Self::Core(capsdbn_core::Error::Geometry { .. }) => "geometry",
            Self::Core(capsdbn_core::Error::Numeric(_)) => "numeric",
            Self::Core(capsdbn_core::Error::Usage(_)) => "usage",
            Self::Io { .. } => "io",
            Self::Manifest { .. } => "manifest",
            Self::Image { .. } => "image",
            Self::Checkpoint(_) => "checkpoint",
            Self::Archive(_) => "archive",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "config" | "geometry" => 3,
            "io" => 4,
            "manifest" | "image" | "archive" => 5,
            "checkpoint" => 6,
            _ => 7,
        }
    }

    /// `error[kind]: message` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind())
    }
}
