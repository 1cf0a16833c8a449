pub mod curate;
pub mod exec;
pub mod format;
pub mod ingest;
pub mod language;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod report;
pub mod syntax;
pub mod task;
pub mod testkit;
