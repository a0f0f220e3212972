//! Error type of the command-line layer and its exit-code mapping.

use std::fmt;

use coropve_core::flowsim::FlowError;
use coropve_core::graphcut::SegmentError;
use coropve_core::io::{FormatError, IoError};
use coropve_core::likelihood::LikelihoodError;
use coropve_core::metrics::MetricsError;
use coropve_core::phantom::PhantomError;
use coropve_core::pve::PveError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Numerical, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.kind as u8
    }

    /// Prefix the message with the file or item it concerns.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PveError> for CliError {
    fn from(e: PveError) -> Self {
        match e {
            PveError::RankDeficient | PveError::AllOutliers { .. } | PveError::InsufficientRange { .. } => {
                CliError::numerical(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<LikelihoodError> for CliError {
    fn from(e: LikelihoodError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::Pve(p) => p.into(),
            SegmentError::Likelihood(l) => l.into(),
            SegmentError::Io(i) => i.into(),
            SegmentError::Config(_) => CliError::data(e.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NoConvergence { .. } | FlowError::Singular => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::NoPeak | PhantomError::Unbounded(_) => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::DegenerateVariance { .. } | MetricsError::NonFinite => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}
