//! Featured-comment recommendation for news moderation.
//!
//! Comments are grouped per article, featurized from user history, reply and
//! like activity, text statistics and optionally bag-of-words or embedding
//! vectors, then scored by a random forest. Per-article rankings are evaluated
//! with NDCG, and every prediction can be broken down into per-feature
//! contributions.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod survey;

pub use error::{Error, Result};
