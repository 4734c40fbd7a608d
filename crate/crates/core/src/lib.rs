//! Temporal point process toolkit built around type-wise local embeddings.
//!
//! Each event type `k` owns a vector space in which every type has an
//! embedding; histories are encoded separately per context type and each
//! type's next-event law is decoded from its own encoding. A multivariate
//! Hawkes simulator provides ground truth for checking that the learned
//! embeddings recover true type-type influences.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod events;
pub mod hawkes;
pub mod model;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
