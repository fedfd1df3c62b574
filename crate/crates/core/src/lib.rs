pub mod config;
pub mod metrics;
pub mod patterns;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod records;
pub mod report;
pub mod store;
pub mod taxonomy;
pub mod workflow;
