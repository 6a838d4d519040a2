//! Command-line tool and JSON service for Help-Me-Think sessions.

pub mod app;
pub mod service;

pub use app::{main_with, Cli, UsageError};
