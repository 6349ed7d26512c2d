//! File formats, ETL, snapshots, reporting, the CLI and the HTTP API around
//! the in-memory engine of `starcube-core`.

pub mod api;
pub mod config;
pub mod error;
pub mod extract;
pub mod gen;
pub mod pipeline;
pub mod query_doc;
pub mod report;
pub mod schema_doc;
pub mod snapshot;
pub mod state;

pub use error::{Error, Result};
pub use starcube_core;
