//! File-level plumbing: CSV ingestion, configuration, method dispatch,
//! comparison and run reports, and the Monte Carlo simulator.

pub mod config;
pub mod io;
pub mod report;
pub mod sim;

use serde::Serialize;
use thiserror::Error;

use crate::ledger::{self, AccountSet, AllocationVector, Fill, LedgerError};
use crate::methods::{self, Allocations, MethodError, MethodKind};
use config::Config;
use report::{ComparisonReport, MethodRow, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {field}: {message}")]
    Parse {
        file: String,
        line: u64,
        field: String,
        message: String,
    },
    #[error("{file}: no data rows")]
    Empty { file: String },
    #[error("{file}: {message}")]
    Config { file: String, message: String },
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error("unknown report format `{0}` (expected json or csv)")]
    Format(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Method(#[from] MethodError),
}

/// Machine-readable form of a [`HarnessError`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Empty { .. } => "empty-input",
            HarnessError::Config { .. } => "config",
            HarnessError::Spec(_) => "spec",
            HarnessError::Format(_) => "format",
            HarnessError::Ledger(_) | HarnessError::Method(MethodError::Ledger(_)) => "validation",
            HarnessError::Method(MethodError::UnknownMethod(_)) => "unknown-method",
            HarnessError::Method(_) => "method",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let (file, line, field) = match self {
            HarnessError::Parse {
                file, line, field, ..
            } => (Some(file.clone()), Some(*line), Some(field.clone())),
            HarnessError::Empty { file } | HarnessError::Config { file, .. } => {
                (Some(file.clone()), None, None)
            }
            HarnessError::Io { path, .. } => (Some(path.clone()), None, None),
            _ => (None, None, None),
        };
        ErrorRecord {
            error: self.kind(),
            message: self.to_string(),
            file,
            line,
            field,
        }
    }
}

pub fn parse_method(name: &str) -> Result<MethodKind, HarnessError> {
    Ok(name.parse::<MethodKind>()?)
}

/// Runs one method by name and reports its result with the per-fill
/// trajectory.
pub fn run_method(
    name: &str,
    fills: &[Fill],
    accounts: &AccountSet,
    config: &Config,
) -> Result<RunReport, HarnessError> {
    let kind = parse_method(name)?;
    let result = methods::run_method(kind, fills, accounts, config.policy(), &config.four)?;
    let trajectory = match &result.allocations {
        Allocations::PerFill(allocs) => Some(ledger::replay(fills, allocs, accounts)?),
        Allocations::PerBatch(_) => None,
    };
    let row = MethodRow::new(kind.name(), "no adjustment", &result, accounts);
    Ok(RunReport::new(config, accounts, row, trajectory.as_ref()))
}

/// Books a fixed allocation sequence and reports it like a method run.
pub fn replay(
    label: &str,
    fills: &[Fill],
    allocations: &[AllocationVector],
    accounts: &AccountSet,
    config: &Config,
) -> Result<RunReport, HarnessError> {
    let result = methods::run_replay(MethodKind::Simple, fills, allocations, accounts)?;
    let trajectory = ledger::replay(fills, allocations, accounts)?;
    let row = MethodRow::new("replay", label, &result, accounts);
    Ok(RunReport::new(config, accounts, row, Some(&trajectory)))
}

/// One row per method, plus one per labelled replay sequence.
pub fn compare(
    fills: &[Fill],
    accounts: &AccountSet,
    config: &Config,
    replays: &[(String, Vec<AllocationVector>)],
) -> Result<ComparisonReport, HarnessError> {
    let mut rows = Vec::with_capacity(MethodKind::ALL.len() + replays.len());
    for kind in MethodKind::ALL {
        let result = methods::run_method(kind, fills, accounts, config.policy(), &config.four)?;
        rows.push(MethodRow::new(
            kind.name(),
            "no adjustment",
            &result,
            accounts,
        ));
    }
    for (label, allocations) in replays {
        let result = methods::run_replay(MethodKind::Simple, fills, allocations, accounts)?;
        rows.push(MethodRow::new("replay", label, &result, accounts));
    }
    Ok(ComparisonReport::new(config, accounts, rows))
}
