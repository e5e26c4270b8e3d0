use std::path::Path;

use mfb_core::MfbError;

/// Failure reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn input(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn pipeline(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            exit_code: 3,
        }
    }

    pub fn missing_or_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::input(
                "input-not-found",
                format!("{}: no such file", path.display()),
            )
        } else {
            Self::input("io", format!("{}: {e}", path.display()))
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.kind, "message": self.message })
    }
}

impl From<MfbError> for CliError {
    fn from(e: MfbError) -> Self {
        if e.is_input_error() {
            Self::input(e.kind(), e.to_string())
        } else {
            Self::pipeline(e.kind(), e.to_string())
        }
    }
}
