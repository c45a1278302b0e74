use nl2api_core::config::ConfigError;
use nl2api_core::runtime::RuntimeError;
use nl2api_core::vector::VectorError;

pub const GENERAL: u8 = 1;
pub const USAGE: u8 = 2;
pub const BACKEND: u8 = 3;
pub const NO_QUERY: u8 = 4;

/// Message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    pub fn general(message: impl std::fmt::Display) -> Self {
        Self::new(GENERAL, message.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        let code = if e.is_backend_unavailable() {
            BACKEND
        } else {
            match e {
                RuntimeError::NotFound { .. } | RuntimeError::Config(_) | RuntimeError::Corpus(_) => USAGE,
                _ => GENERAL,
            }
        };
        Self::new(code, e.to_string())
    }
}

impl From<VectorError> for Failure {
    fn from(e: VectorError) -> Self {
        RuntimeError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::general(e)
    }
}
