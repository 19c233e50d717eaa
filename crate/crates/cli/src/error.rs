use serde::Serialize;
use tfopt::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Input,
    NotFound,
    Conflict,
    Solver,
    NonFinite,
}

/// Error carried to both front ends: an exit code for the CLI, a status
/// code for the service, and the same JSON body for both.
#[derive(Debug, Clone, Serialize)]
pub struct AppError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn not_found(what: &str, name: &str) -> Self {
        Self::new(ErrorKind::NotFound, format!("unknown {what} {name:?}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Solver | ErrorKind::NonFinite => 3,
            _ => 2,
        }
    }

    pub fn status(&self) -> u16 {
        match self.kind {
            ErrorKind::Usage | ErrorKind::Input => 400,
            ErrorKind::NotFound => 404,
            ErrorKind::Conflict => 409,
            ErrorKind::Solver | ErrorKind::NonFinite => 500,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for AppError {}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::NonFinite(_) => ErrorKind::NonFinite,
            Error::EmptySystem | Error::SingularSystem { .. } => ErrorKind::Solver,
            _ => ErrorKind::Input,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Input, e.to_string())
    }
}
