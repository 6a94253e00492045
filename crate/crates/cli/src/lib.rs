//! Command-line driver and HTTP selection service.

pub mod commands;
pub mod service;
