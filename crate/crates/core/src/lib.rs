//! Content and style embeddings of app icons, exact nearest-neighbour
//! retrieval over them, and the evaluation tooling used to find look-alike
//! (potentially counterfeit) apps.

pub mod backbone;
pub mod config;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod evaluation;
pub mod knee;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod sift;
pub mod store;

pub use error::{Error, Result};
