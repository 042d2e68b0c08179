//! Memory-bounded key/value caching for a miniature transformer.
//!
//! A [`mempot::MemoryPot`] holds at most |M| entries per head. The
//! distillation engine in [`ccd`] keeps it within that bound over arbitrarily
//! long streams, resetting rotary positions after every compaction.

pub mod bench;
pub mod ccd;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod mempot;
pub mod minimodel;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
