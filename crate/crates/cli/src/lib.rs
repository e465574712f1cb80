//! Command-line interface and HTTP service for the bid screening library.

pub mod commands;
pub mod server;
pub mod store;
