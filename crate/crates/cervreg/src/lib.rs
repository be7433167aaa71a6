//! Files, configuration and experiment orchestration around `cervreg-core`.
//!
//! Images are binary PGM, tables are CSV (comma separated, header row, LF
//! line endings), models use small versioned little-endian binary formats
//! and experiments are described by a TOML file (see [`config`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod model;
pub mod parallel;
pub mod pgm;
pub mod pipeline;
pub mod tables;

pub use error::{Error, Result};
