use depthvision_core::Error as CoreError;
use depthvision_neural::NeuralError;
use depthvision_vlmqa::VlmError;
use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Io,
    Divergence,
    Endpoint,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Divergence => 4,
            ErrorKind::Endpoint => 5,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON rendering for standard error.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "code": self.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

fn core_kind(e: &CoreError) -> ErrorKind {
    match e {
        CoreError::Io { .. } | CoreError::Format { .. } | CoreError::CloudSize { .. } => ErrorKind::Io,
        _ => ErrorKind::Config,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        Self::new(core_kind(&e), e.to_string())
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        let kind = match &e {
            NeuralError::Diverged { .. } => ErrorKind::Divergence,
            NeuralError::Io(_) | NeuralError::Corrupt(_) | NeuralError::Version { .. } => ErrorKind::Io,
            NeuralError::Core(c) => core_kind(c),
            _ => ErrorKind::Config,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        let kind = match &e {
            VlmError::Unavailable(_) | VlmError::Malformed(_) | VlmError::NotRecorded(_) => ErrorKind::Endpoint,
            VlmError::Io { .. } | VlmError::Format { .. } => ErrorKind::Io,
            VlmError::Core(c) => core_kind(c),
            VlmError::Config(_) | VlmError::UnknownEndpoint(_) => ErrorKind::Config,
        };
        Self::new(kind, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let div: CliError = NeuralError::Diverged {
            step: 3,
            what: "g_l1",
            value: f64::NAN,
        }
        .into();
        assert_eq!(div.exit_code(), 4);
        let io: CliError = CoreError::Io {
            path: "x".into(),
            source: std::io::Error::other("gone"),
        }
        .into();
        assert_eq!(io.exit_code(), 3);
        let ep: CliError = VlmError::Unavailable("down".into()).into();
        assert_eq!(ep.exit_code(), 5);
        assert_eq!(CliError::config("bad").exit_code(), 2);
        let line = ep.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["code"], 5);
        assert_eq!(v["error"]["kind"], "endpoint");
    }
}
