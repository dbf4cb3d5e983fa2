//! Experiment orchestration: config parsing, dataset-to-stream wiring,
//! multi-seed execution, and result/checkpoint output for the online
//! learning engine.

pub mod commands;
pub mod config;
