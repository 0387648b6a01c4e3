//! Command-line and HTTP front end for the functional response design engine.

pub mod assist;
pub mod commands;
pub mod server;
