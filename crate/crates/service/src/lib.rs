//! HTTP service, configuration and command-line tools around the
//! `duelbench` library.

pub mod api;
pub mod cli;
pub mod config;
pub mod report;
