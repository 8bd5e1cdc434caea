//! Service shell around `kinlink-core`: configuration files, the on-disk
//! event log, the HTTP gateway, outbound delivery and the CLI.

pub mod cli;
pub mod config;
pub mod delivery;
pub mod gateway;
pub mod logfile;
pub mod remote;
pub mod wire;
