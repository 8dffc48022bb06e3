//! Documents, annotation formats, tag schemes, vocabularies, embedding files
//! and the synthetic note generator.

pub mod column;
mod document;
mod embeddings;
mod split;
pub mod standoff;
pub mod synthetic;
mod tags;
mod vocab;

pub use document::{tokenize, Document, EntitySpan, Token};
pub use embeddings::{load_pretrained, EmbeddingTable, Pretrained};
pub use split::split_train_valid;
pub use standoff::{load_standoff, Standoff};
pub use synthetic::generate_synthetic_corpus;
pub use tags::{
    check_non_overlapping, encode_spans, spans_to_tags, tags_to_spans, TagScheme, OUTSIDE,
};
pub use vocab::{
    build_vocab, extract_affixes, Lexicon, Vocabulary, PAD, PAD_SYMBOL, UNK, UNK_SYMBOL,
};
