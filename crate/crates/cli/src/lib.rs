//! Command-line front end and backend service.

pub mod commands;
pub mod server;
