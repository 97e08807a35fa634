use std::path::Path;

use hecsb_codec::CodecError;
use hecsb_core::CoreError;
use hecsb_runtime::RuntimeError;
use thiserror::Error;

/// Tool-level error. The display form is always one line,
/// `<class>: <message>`, so scripts can branch on the class token.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("artifact: {0}")]
    Artifact(String),
    #[error("train: {0}")]
    Train(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// The machine-parsable class token in front of the colon.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Ingest(_) => "ingest",
            CliError::Artifact(_) => "artifact",
            CliError::Train(_) => "train",
            CliError::Transport(_) => "transport",
            CliError::Codec(_) => "codec",
            CliError::Io(_) => "io",
        }
    }

    /// Annotates an io error with the path it happened on.
    pub fn io_at(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Training(m) => CliError::Train(m),
            CoreError::Checkpoint(m) => CliError::Artifact(m),
            CoreError::Io(e) => CliError::Io(e.to_string()),
            CoreError::Codec(e) => CliError::Codec(e.to_string()),
            // Dimension/argument/range problems reaching the tool boundary
            // mean the run was configured against itself.
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        CliError::Codec(e.to_string())
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        CliError::Transport(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_one_line_class_colon_message() {
        let cases: Vec<CliError> = vec![
            CliError::Config("bad key".into()),
            CliError::Ingest("bad magic".into()),
            CliError::Artifact("missing file".into()),
            CliError::Train("diverged".into()),
            CliError::Transport("refused".into()),
            CliError::Codec("bad table".into()),
            CliError::Io("denied".into()),
        ];
        for e in cases {
            let line = e.to_string();
            assert!(!line.contains('\n'));
            assert!(line.starts_with(&format!("{}: ", e.class())), "{line}");
        }
    }

    #[test]
    fn core_errors_map_to_their_classes() {
        let train: CliError = CoreError::Training("x".into()).into();
        assert_eq!(train.class(), "train");
        let art: CliError = CoreError::Checkpoint("x".into()).into();
        assert_eq!(art.class(), "artifact");
        let cfg: CliError = CoreError::Dimension("x".into()).into();
        assert_eq!(cfg.class(), "config");
    }
}
