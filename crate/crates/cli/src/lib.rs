//! Experiment configuration and command implementations behind the
//! `xxchain` binary, exposed as a library so integration tests drive the
//! exact production code paths.

pub mod commands;
pub mod config;
