//! Operational shell around the twinner core: the REST API and the CLI.

pub mod api;
pub mod cli;
