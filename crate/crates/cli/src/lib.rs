//! Command line entry points and the HTTP editing service.

pub mod cli;
pub mod commands;
pub mod pipeline;
pub mod service;
