//! Library surface of the CLI so integration tests can drive the
//! commands directly; the `gptape` binary is a thin wrapper.

pub mod commands;
pub mod config;
pub mod data;
