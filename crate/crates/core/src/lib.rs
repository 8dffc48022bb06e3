//! Sentence-boundary-free sequence labeling for clinical de-identification.
//!
//! The tagger is a biLSTM-CRF whose per-token input concatenates character,
//! pretrained token, affix, and forward/backward n-gram context embeddings,
//! followed by windowed additive attention. Documents are consumed as a
//! single token stream: line breaks and sentences never reach the model.

pub mod cli;
pub mod context;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
