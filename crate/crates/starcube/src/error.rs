use std::io;
use std::path::PathBuf;

use starcube_core::cube::CubeError;
use starcube_core::mview::MViewError;
use starcube_core::nav::NavError;
use starcube_core::query::{PivotError, QueryError};
use starcube_core::store::StoreError;
use thiserror::Error;

use crate::extract::ExtractError;
use crate::pipeline::EtlReport;
use crate::query_doc::DocError;
use crate::report::ReportError;
use crate::schema_doc::SchemaDocError;
use crate::snapshot::SnapshotError;

/// Every failure the CLI and server can report, grouped by exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Schema(#[from] SchemaDocError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    View(#[from] MViewError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Pivot(#[from] PivotError),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Config(String),
    /// A fatal ETL error with the report of the work done before it.
    #[error("ETL run aborted, store unchanged: {error}")]
    Etl { error: Box<Error>, report: Box<EtlReport> },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// 1 = validation or data error, 2 = usage error, 3 = I/O or corruption.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Snapshot(_) => 3,
            Error::Extract(e) if e.is_io() => 3,
            Error::Usage(_) => 2,
            Error::Etl { error, .. } => error.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
