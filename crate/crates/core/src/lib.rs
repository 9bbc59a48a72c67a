//! Mixed phoneme / sup-phoneme BERT pre-training toolkit.
//!
//! The pipeline runs text through a lexicon front end, splits every word into
//! sup-phoneme tokens with a BPE learned over phonemes, aligns the two token
//! streams position by position, masks them consistently, and trains an
//! FFT-block encoder with phoneme and sup-phoneme MLM heads.

pub mod bpe;
pub mod cli;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod masking;
pub mod mixing;
pub mod model;
pub mod synthetic;
pub mod train;
pub mod vocab;

pub use error::{CheckpointError, Error, Result};
