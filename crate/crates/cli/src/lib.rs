//! Experiment runner, configuration and report emission around the
//! numerical core.

pub mod config;
pub mod plot;
pub mod study;
