//! Granger causality between event types from multi-type event sequences.
//!
//! The pipeline fits a semi-parametric neural point process ([`npp`]) and
//! then attributes its cumulative-intensity predictions to past events with
//! integrated gradients ([`attribution`]), aggregating the scores into a K×K
//! causality matrix ([`causality`]). Synthetic generators with known ground
//! truth ([`generators`]) and metrics ([`eval`]) close the loop.

pub mod attribution;
pub mod causality;
pub mod error;
pub mod eval;
pub mod generators;
pub mod npp;
pub mod seqdata;
pub mod stats;

pub use error::{Error, Result};
