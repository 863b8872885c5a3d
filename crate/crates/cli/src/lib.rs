//! Command-line tools and the read-only HTTP service for semantic Gaussian
//! fields.

pub mod api;
pub mod commands;
pub mod service;
