//! Command implementations behind the `captain` binary.

pub mod commands;
pub mod config;
pub mod failure;
