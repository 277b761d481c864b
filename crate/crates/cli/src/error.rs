use kapao::io::{ConfigError, GridFileError, JsonError};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Io,
    Validation,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn io(code: &str, message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Io,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn validation(code: &str, message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Io => 2,
            Kind::Validation => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let kind = match self.kind {
            Kind::Io => "io",
            Kind::Validation => "validation",
        };
        json!({ "error": { "kind": kind, "code": self.code, "message": self.message } }).to_string()
    }
}

impl From<GridFileError> for CliError {
    fn from(e: GridFileError) -> Self {
        match e {
            GridFileError::Io(_) => Self::io(e.code(), e.to_string()),
            _ => Self::validation(e.code(), e.to_string()),
        }
    }
}

impl From<JsonError> for CliError {
    fn from(e: JsonError) -> Self {
        match e {
            JsonError::Io(_) => Self::io("io", e.to_string()),
            JsonError::Parse(_) => Self::validation("json_parse", e.to_string()),
            JsonError::Invalid { .. } => Self::validation("json_invalid", e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Self::io("io", e.to_string()),
            _ => Self::validation("config", e.to_string()),
        }
    }
}

/// Wraps any library error as a validation failure with the given code.
pub fn invalid<E: std::fmt::Display>(code: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::validation(code, e.to_string())
}
