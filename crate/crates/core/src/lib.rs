//! Semi-streaming minimum-cost flow.
//!
//! A robust interior-point method that runs in O~(sqrt(n)) passes over an
//! edge stream using O~(n^1.5) words of persistent state, exposing implicit
//! per-edge queries into every iterate, plus a two-party communication
//! simulator and an exact combinatorial oracle for verification.

pub mod comm;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod lifecycle;
pub mod gradient;
pub mod ipm;
pub mod lewis;
pub mod linalg;
pub mod passes;
pub mod prng;
pub mod stream;

pub use error::{Error, Result};
