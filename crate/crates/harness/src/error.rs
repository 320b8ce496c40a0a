use std::fmt;

use thiserror::Error;

/// Command failure, split by exit code: validation problems (bad config,
/// missing or mismatched artifacts) exit with 2, runtime failures with 3.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{message}{}", Hint(hint))]
    Validation { message: String, hint: Option<String> },

    #[error("{message}{}", Hint(hint))]
    Runtime { message: String, hint: Option<String> },
}

struct Hint<'a>(&'a Option<String>);

impl fmt::Display for Hint<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(h) => write!(f, "\n  hint: {h}"),
            None => Ok(()),
        }
    }
}

impl HarnessError {
    pub fn validation(message: impl Into<String>) -> Self {
        HarnessError::Validation { message: message.into(), hint: None }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        HarnessError::Runtime { message: message.into(), hint: None }
    }

    pub fn with_hint(self, h: impl Into<String>) -> Self {
        match self {
            HarnessError::Validation { message, .. } => HarnessError::Validation { message, hint: Some(h.into()) },
            HarnessError::Runtime { message, .. } => HarnessError::Runtime { message, hint: Some(h.into()) },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation { .. } => 2,
            HarnessError::Runtime { .. } => 3,
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Validation { .. })
    }
}

impl From<maint_core::ModelError> for HarnessError {
    fn from(e: maint_core::ModelError) -> Self {
        use maint_core::ModelError as M;
        match e {
            M::Io(_) | M::BeliefUnderflow { .. } => HarnessError::runtime(e.to_string()),
            other => HarnessError::validation(other.to_string()),
        }
    }
}

impl From<maint_inference::InferenceError> for HarnessError {
    fn from(e: maint_inference::InferenceError) -> Self {
        use maint_inference::InferenceError as I;
        match e {
            I::Model(m) => m.into(),
            I::Config(_)
            | I::EmptyDataset
            | I::Prior(_)
            | I::Incompatible(_)
            | I::Parse { .. }
            | I::Decode(_)
            | I::Degenerate { .. } => HarnessError::validation(e.to_string()),
            other => HarnessError::runtime(other.to_string()),
        }
    }
}

impl From<maint_rl::RlError> for HarnessError {
    fn from(e: maint_rl::RlError) -> Self {
        use maint_rl::RlError as R;
        match e {
            R::Model(m) => m.into(),
            R::Config(_) | R::Dimension(_) | R::Checkpoint(_) | R::Unsupported(_) => HarnessError::validation(e.to_string()),
            other => HarnessError::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::validation(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
