//! Mines convolutional model definitions from source corpora into an
//! abstract network representation, matches them to a dataset's
//! characteristics, rewrites them with layer-pattern rules and emits
//! trainable warm-start models for architecture search.

pub mod adapt;
pub mod ann;
pub mod catalog;
pub mod characteristics;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod database;
pub mod harness;
pub mod json;
pub mod literal;
pub mod matching;
pub mod miner;
pub mod pipeline;
pub mod python;
pub mod shape;
pub mod transform;

pub use ann::{ann_equal, normalize, AbstractLayer, AbstractNeuralNetwork, LayerKind, LayerVocabulary, OptimizerSpec};
pub use literal::Literal;
