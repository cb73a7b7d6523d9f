//! Simulation harness and data front end for `repro-logit`: scenario
//! presets, replicated runs with JSON-lines output, CSV ingestion and
//! summary tables.

pub mod error;
pub mod harness;
pub mod ingest;
pub mod report;
pub mod scenario;

pub use error::{CliError, CliResult};
pub use harness::{run_scenario, summarize, CoefSelection, ReplicationRecord, RunOptions, RunSummary};
pub use ingest::{ingest_csv, IngestOptions, Ingested};
pub use report::{report_tables, ReportFormat};
pub use scenario::Scenario;
