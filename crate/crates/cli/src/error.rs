use std::fmt;

use hierlogic::io::FormatError;
use hierlogic::metrics::MetricsError;
use hierlogic::rules::LossError;
use hierlogic::trainer::TrainError;
use hierlogic::HierarchyError;

/// A failure reported as a single `error: <kind>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    /// Exit status: 2 for bad invocations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error: {}: {}", self.kind, msg)
    }
}

macro_rules! kind {
    ($($t:ty => $k:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($k, e.to_string())
            }
        })*
    };
}

kind! {
    std::io::Error => "io",
    serde_json::Error => "json",
    HierarchyError => "hierarchy",
    FormatError => "format",
    LossError => "loss",
    MetricsError => "metrics",
    TrainError => "train",
}

impl From<rayon::ThreadPoolBuildError> for CliError {
    fn from(e: rayon::ThreadPoolBuildError) -> Self {
        CliError::config(e.to_string())
    }
}
