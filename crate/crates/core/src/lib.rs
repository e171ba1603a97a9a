//! Continuous-time event streams and discrete snapshot sequences under one
//! data model, with conversion in both directions, memorization and logistic
//! link scorers, per-snapshot training and a streaming link-prediction
//! evaluation harness.

pub mod cli;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod input_mapper;
pub mod model;
pub mod output_mapper;
pub mod scorer;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{Event, EventStream, NodeId, Snapshot, SnapshotSequence, Timestamp};
