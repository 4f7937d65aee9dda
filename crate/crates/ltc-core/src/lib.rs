//! Core data model and pure algorithms for the `ltc` pipeline.
//!
//! Everything in this crate is deterministic, allocation-only code with no
//! IO: the unified-diff model, the versioned skill document and its CRUD
//! replay, patch similarity metrics, the stratified temporal sampler, the
//! query leakage scan, and report aggregation. The companion `ltc` crate
//! carries git access, model backends, worktrees, and the CLI.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std`
//! feature only forwards to serde.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aggregate;
pub mod diff;
pub mod leakage;
pub mod metrics;
pub mod mining;
pub mod sampling;
pub mod skills;

pub use diff::{ChangeKind, FilePatch, Hunk, Patch};
pub use metrics::Rational;
pub use skills::{SkillDocument, SkillEntry, UpdateOp};
