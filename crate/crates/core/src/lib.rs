#![no_std]

//! Star-schema warehouse engine core.
//!
//! Pure in-memory machinery, usable without `std`: schema metadata, cleaning
//! statistics for staged rows, the columnar store, the group-by lattice and
//! cuboid materialization, materialized views with query rewrite, and the OLAP
//! query and navigation algebra. File formats, IO and services live in the
//! `starcube` crate.

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod clean;
pub mod cube;
pub mod mview;
pub mod nav;
pub mod query;
pub mod schema;
pub mod store;
pub mod value;
