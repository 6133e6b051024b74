//! Nearest-neighbor analysis of encoder hidden states.
//!
//! The crate reads logged hidden states and embeddings together with token
//! metadata, runs an exact cosine k-NN scan, and measures how the neighbors
//! relate to the query word: overlap with embedding neighbors, overlap with
//! lexical relations, spread of the similarity scores, per-position trends
//! and PARSEVAL similarity of local syntactic subtrees.

pub mod corpusio;
pub mod knn;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod treesim;
