//! Learning-to-commit pipeline library. See the README for the CLI.

pub mod agent;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod fixtures;
pub mod gateway;
pub mod gitio;
pub mod judge;
pub mod manifest;
pub mod memstore;
pub mod miner;
pub mod onboarding;
pub mod report;
pub mod runstore;
pub mod solver;
pub mod worktree;

pub use ltc_core as core;
