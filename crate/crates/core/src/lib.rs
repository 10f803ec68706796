//! A grey-box fuzzer for chunk-based binary formats.
//!
//! Comparison operands logged by an instrumented target are related to
//! input bytes by bit-flip dependency analysis. The result drives
//! input-to-state operand replacement, checksum detection with patching
//! and input repair, and a per-byte tag array from which fields and
//! chunks are inferred for structure-aware mutation.

pub mod checksum;
pub mod cmplog;
pub mod coverage;
pub mod deps;
pub mod error;
pub mod exec;
pub mod fuzzer;
pub mod havoc;
pub mod i2s;
pub mod operands;
pub mod report;
pub mod structure;
pub mod tags;
pub mod target;

pub use error::{Error, Result};
