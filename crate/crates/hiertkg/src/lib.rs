//! Temporal-knowledge-graph link prediction: a temporal graph network
//! with per-node memory, fused with differentiable hierarchical graph
//! pooling over interaction snapshots.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fusion;
pub mod ingest;
pub mod linkpred;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod pooling;
pub mod tgn;

pub use error::{HierError, Result};
