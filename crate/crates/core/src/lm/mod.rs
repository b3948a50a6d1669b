//! Word-level decoding.
//!
//! [`NGramModel`] is a backoff n-gram model that can be trained with
//! interpolated Kneser-Ney or read from ARPA text. [`LexiconTrie`] maps
//! phoneme strings to words, and [`hlg_decode`] runs a frame-synchronous
//! token-passing search over the product of the CTC topology, the trie and
//! the n-gram model.

mod ngram;
mod search;
mod trie;

pub use ngram::{char_tokens, load_arpa, parse_arpa, train_ngram, NGramModel, SymbolLm, DEFAULT_DISCOUNT};
pub use search::{
    char_lm_rescore, hlg_decode, DecodingGraph, GraphWeights, HlgResult, TextHypothesis,
    WordHypothesis,
};
pub use trie::LexiconTrie;
