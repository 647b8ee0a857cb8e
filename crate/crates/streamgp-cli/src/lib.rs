//! Experiment harness around `streamgp-core`: configuration files, dataset
//! loading and generation, the streaming evaluation protocol, oracle
//! checks and CSV reports. The `streamgp` binary is a thin wrapper over
//! this library.

pub mod config;
pub mod data;
pub mod experiment;
pub mod oracle;
