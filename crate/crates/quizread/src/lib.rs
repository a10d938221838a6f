//! HTTP service and command-line front end over `quizread-core`.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
