//! Command line, ingestion, reports and the external scorer bridge.

pub mod bridge;
pub mod cli;
pub mod ingest;
pub mod report;
