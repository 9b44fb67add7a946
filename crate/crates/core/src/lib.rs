//! Similarity-memory-prior segmentation: a prototype memory bank with
//! loss-driven slot replacement, memory-matched attention, double-similarity
//! window enhancement, and a small dual-encoder segmentation network built on
//! a minimal reverse-mode tensor library.

pub mod config;
pub mod decisions;
pub mod dmw_la;
pub mod ds_gim;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kmeans;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod window;

pub use memory::{ClusterAssignment, PrototypeMemoryBank, UpdateReport};
pub use error::{MemoryError, Result, TensorError};
pub use tape::{Tape, Var};
pub use tensor::{cosine_similarity, Tensor};
