//! Scenario configuration, orchestration, metrics and output.

pub mod compare;
pub mod config;
pub mod output;
pub mod presets;
pub mod run;
