//! Command implementations and the HTTP service for the `recallgraph` binary.

pub mod commands;
pub mod server;
