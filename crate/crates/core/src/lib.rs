//! Emphasis-aware TTS front-end: unsupervised prominence labels from speech,
//! a gated graph network emphasis predictor over dependency parses, and
//! phone-level conditioning tensors.

pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod graph;
pub mod predictor;
pub mod prominence;
pub mod conditioning;
