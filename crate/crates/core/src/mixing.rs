//! Aligned phoneme / sup-phoneme streams and the summed input embedding.
//!
//! Every sup-phoneme token is repeated once per phoneme it covers, so both
//! streams share one position axis. BOS and EOS get length-1 spans and their
//! own one-token "words".

use ndarray::Array2;

use crate::bpe::{encode_word, MergeTable};
use crate::error::{Error, Result};
use crate::frontend::WordPronunciation;
use crate::vocab::{PhonemeId, SupId};

/// A sup-phoneme token placed on positions `[start, end)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SupSpan {
    pub id: SupId,
    pub start: usize,
    pub end: usize,
}

impl SupSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedSequence {
    pub phoneme_ids: Vec<PhonemeId>,
    pub sup_ids_upsampled: Vec<SupId>,
    pub sup_spans: Vec<SupSpan>,
    /// Half-open ranges over indices into `sup_spans`, one per word.
    pub word_spans: Vec<(usize, usize)>,
}

impl MixedSequence {
    /// Number of positions.
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    /// Word index of every sup token.
    pub fn word_of_token(&self) -> Vec<usize> {
        let mut out = vec![0; self.sup_spans.len()];
        for (w, &(s, e)) in self.word_spans.iter().enumerate() {
            out[s..e].iter_mut().for_each(|x| *x = w);
        }
        out
    }
}

/// Positions needed for these pronunciations, BOS and EOS included.
pub fn required_len(prons: &[WordPronunciation]) -> usize {
    prons.iter().map(|p| p.phonemes.len()).sum::<usize>() + 2
}

/// Builds the aligned streams `BOS, words..., EOS`.
pub fn build_mixed_sequence(
    prons: &[WordPronunciation],
    table: &MergeTable,
    max_len: usize,
) -> Result<MixedSequence> {
    if prons.is_empty() {
        return Err(Error::EmptySentence);
    }
    let len = required_len(prons);
    if len > max_len {
        return Err(Error::SequenceTooLong { len, max: max_len });
    }
    let mut seq = MixedSequence {
        phoneme_ids: Vec::with_capacity(len),
        sup_ids_upsampled: Vec::with_capacity(len),
        sup_spans: Vec::new(),
        word_spans: Vec::with_capacity(prons.len() + 2),
    };
    let push_token = |seq: &mut MixedSequence, id: SupId, phonemes: &[PhonemeId]| {
        let start = seq.phoneme_ids.len();
        seq.phoneme_ids.extend_from_slice(phonemes);
        seq.sup_ids_upsampled
            .extend(std::iter::repeat_n(id, phonemes.len()));
        seq.sup_spans.push(SupSpan {
            id,
            start,
            end: start + phonemes.len(),
        });
    };

    push_token(&mut seq, SupId::BOS, &[PhonemeId::BOS]);
    seq.word_spans.push((0, 1));
    for pron in prons {
        let first = seq.sup_spans.len();
        if pron.is_oov {
            push_token(&mut seq, SupId::UNK, &[PhonemeId::UNK]);
        } else {
            let mut offset = 0;
            for tok in encode_word(&pron.phonemes, table) {
                let end = offset + tok.span_len;
                push_token(&mut seq, tok.id, &pron.phonemes[offset..end]);
                offset = end;
            }
            debug_assert_eq!(offset, pron.phonemes.len());
        }
        seq.word_spans.push((first, seq.sup_spans.len()));
    }
    let eos = seq.sup_spans.len();
    push_token(&mut seq, SupId::EOS, &[PhonemeId::EOS]);
    seq.word_spans.push((eos, eos + 1));
    Ok(seq)
}

/// Phoneme, sup-phoneme and position embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub phoneme: Array2<f64>,
    pub sup: Array2<f64>,
    pub position: Array2<f64>,
}

impl EmbeddingTables {
    pub fn zeros(phoneme_vocab: usize, sup_vocab: usize, max_len: usize, hidden: usize) -> Self {
        Self {
            phoneme: Array2::zeros((phoneme_vocab, hidden)),
            sup: Array2::zeros((sup_vocab, hidden)),
            position: Array2::zeros((max_len, hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.phoneme.ncols()
    }
}

fn check_row(table: &'static str, rows: usize, id: usize) -> Result<()> {
    if id >= rows {
        return Err(Error::Index { table, id, rows });
    }
    Ok(())
}

/// Row `t` is `phoneme[phoneme_ids[t]] + sup[sup_ids[t]] + position[t]`.
pub fn embed(
    phoneme_ids: &[PhonemeId],
    sup_ids: &[SupId],
    tables: &EmbeddingTables,
) -> Result<Array2<f64>> {
    assert_eq!(phoneme_ids.len(), sup_ids.len(), "streams must be aligned");
    let t_len = phoneme_ids.len();
    check_row("position", tables.position.nrows(), t_len.saturating_sub(1))?;
    let mut out = Array2::zeros((t_len, tables.hidden()));
    for (t, (p, s)) in phoneme_ids.iter().zip(sup_ids).enumerate() {
        check_row("phoneme", tables.phoneme.nrows(), p.index())?;
        check_row("sup-phoneme", tables.sup.nrows(), s.index())?;
        let mut row = out.row_mut(t);
        row += &tables.phoneme.row(p.index());
        row += &tables.sup.row(s.index());
        row += &tables.position.row(t);
    }
    Ok(out)
}

pub fn embed_sequence(seq: &MixedSequence, tables: &EmbeddingTables) -> Result<Array2<f64>> {
    embed(&seq.phoneme_ids, &seq.sup_ids_upsampled, tables)
}
