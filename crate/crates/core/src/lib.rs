//! Integration of block-delimited chemical structure corpora through a
//! byte-offset index, 2D descriptor computation, and lipophilicity modeling
//! with diagnostics and exact Shapley explanations.

pub mod acquire;
pub mod descriptors;
pub mod explain;
pub mod index;
pub mod integrate;
pub mod linalg;
pub mod pipeline;
pub mod models;
pub mod sdf;
pub mod stats;
pub mod synth;
