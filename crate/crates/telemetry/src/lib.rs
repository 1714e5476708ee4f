//! Telemetry collection for instrumented textbooks: an HTTP service that
//! accepts quiz answers and bug reports and appends them to an NDJSON log.

pub mod server;
pub mod store;

pub use server::{router, serve, AppState, KnownContent, TOKEN_ENV};
pub use store::{Ack, EventStore, ExportFilter, StoreError};
