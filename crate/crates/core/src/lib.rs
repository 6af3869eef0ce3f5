//! Constraint-graph enhanced relation extraction under distant supervision.

pub mod constraint_graph;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod graph_encoder;
pub mod model;
pub mod numerics;
pub mod sentence_encoder;
pub mod synthetic;

pub use error::{Error, Result};
