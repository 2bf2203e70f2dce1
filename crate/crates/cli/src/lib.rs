//! Command-line drivers for the polymer simulation: configuration parsing,
//! experiment runners and result output.

pub mod config;
pub mod diagnose;
pub mod error;
pub mod output;
pub mod selftest;
pub mod simulate;
pub mod sweep;
