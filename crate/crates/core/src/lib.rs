//! Turns designer feedback on generated UIs into preference data, scores
//! and filters candidates with a trainable reward head, exports alignment
//! pairs, and rates competing generators from blind pairwise battles.

pub mod arena;
pub mod corpus;
pub mod error;
pub mod feedback;
pub mod gateway;
pub mod hash;
pub mod htmlkit;
pub mod ids;
pub mod pairgen;
pub mod reward;

pub use error::{Error, Result};
