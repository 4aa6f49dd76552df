//! Relation extraction from distant supervision with pattern filtering
//! and semantic label propagation.

pub mod align;
pub mod annotation;
pub mod classifier;
pub mod confidence;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod pipeline;
pub mod propagation;
pub mod semantic;
pub mod server;
pub mod synth;
