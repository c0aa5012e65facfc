//! Command line runner and read-only dashboard server for stagecheck projects.

pub mod commands;
pub mod server;
pub mod views;
