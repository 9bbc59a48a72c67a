//! Text normalization and lexicon-based grapheme-to-phoneme conversion.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::vocab::{self, PhonemeId, PhonemeVocab};

const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// A sentence split into lowercase words and standalone punctuation marks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizedSentence {
    units: Vec<String>,
}

impl NormalizedSentence {
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Units joined by single spaces.
    pub fn join(&self) -> String {
        self.units.join(" ")
    }

    /// Keeps the first `n` units.
    pub fn truncate(&mut self, n: usize) {
        self.units.truncate(n);
    }
}

pub fn is_punct_unit(unit: &str) -> bool {
    let mut chars = unit.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if vocab::is_punctuation(c))
}

/// Lowercases letters, splits off punctuation marks, spells digits one by one
/// and treats every other symbol as a separator.
pub fn normalize_text(raw: &str) -> Result<NormalizedSentence> {
    let mut units = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, units: &mut Vec<String>| {
        if !word.is_empty() {
            units.push(std::mem::take(word));
        }
    };
    for c in raw.chars() {
        if c.is_alphabetic() {
            word.extend(c.to_lowercase());
        } else if let Some(d) = c.to_digit(10) {
            flush(&mut word, &mut units);
            units.push(DIGIT_WORDS[d as usize].to_string());
        } else if vocab::is_punctuation(c) {
            flush(&mut word, &mut units);
            units.push(c.to_string());
        } else {
            flush(&mut word, &mut units);
        }
    }
    flush(&mut word, &mut units);
    if units.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(NormalizedSentence { units })
}

/// Word to pronunciation map. Keys are lowercase; pronunciations are never empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<PhonemeId>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry unless the word is already present. Returns whether it was added.
    pub fn insert(&mut self, word: &str, phonemes: Vec<PhonemeId>) -> Result<bool> {
        if phonemes.is_empty() {
            return Err(Error::Config(format!("empty pronunciation for `{word}`")));
        }
        let key = word.to_lowercase();
        if self.entries.contains_key(&key) {
            return Ok(false);
        }
        self.entries.insert(key, phonemes);
        Ok(true)
    }

    pub fn get(&self, word: &str) -> Option<&[PhonemeId]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[PhonemeId])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Strips a `(N)` variant marker from a lexicon headword.
fn split_variant(word: &str) -> (&str, bool) {
    if let Some(open) = word.rfind('(') {
        let inner = &word[open + 1..];
        if let Some(num) = inner.strip_suffix(')') {
            if !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit()) && open > 0 {
                return (&word[..open], true);
            }
        }
    }
    (word, false)
}

/// Reads a CMUdict-style lexicon: `WORD  PH1 PH2 ...`, `;;;` comments.
///
/// The first pronunciation listed for a word wins. Stress digits are removed
/// when the vocabulary was built without stress.
pub fn load_lexicon<R: BufRead>(source: R, vocab: &PhonemeVocab) -> Result<Lexicon> {
    let mut lexicon = Lexicon::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;;") {
            continue;
        }
        let mut fields = line.split_whitespace();
        let head = fields.next().expect("non-empty line has a field");
        let (word, _) = split_variant(head);
        let mut phonemes = Vec::new();
        for sym in fields {
            let sym = if vocab.strip_stress() {
                vocab::strip_stress(sym)
            } else {
                sym
            };
            let id = vocab.id(sym).ok_or_else(|| Error::UnknownPhoneme {
                line: line_no,
                symbol: sym.to_string(),
            })?;
            if id.is_special() {
                return Err(Error::UnknownPhoneme {
                    line: line_no,
                    symbol: sym.to_string(),
                });
            }
            phonemes.push(id);
        }
        if phonemes.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("entry `{head}` has no phonemes"),
            });
        }
        lexicon.insert(word, phonemes)?;
    }
    Ok(lexicon)
}

/// Pronunciation of one normalized unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordPronunciation {
    pub surface: String,
    pub phonemes: Vec<PhonemeId>,
    pub is_oov: bool,
    pub is_punct: bool,
}

/// Looks every unit up. Punctuation maps to its mark's phoneme; unknown words
/// become a single UNK phoneme flagged as out of vocabulary.
pub fn g2p(
    sentence: &NormalizedSentence,
    lexicon: &Lexicon,
    vocab: &PhonemeVocab,
) -> Vec<WordPronunciation> {
    sentence
        .units()
        .iter()
        .map(|unit| {
            let punct = if is_punct_unit(unit) {
                unit.chars().next().and_then(|c| vocab.punct_id(c))
            } else {
                None
            };
            if let Some(p) = punct {
                WordPronunciation {
                    surface: unit.clone(),
                    phonemes: vec![p],
                    is_oov: false,
                    is_punct: true,
                }
            } else if let Some(ph) = lexicon.get(unit) {
                WordPronunciation {
                    surface: unit.clone(),
                    phonemes: ph.to_vec(),
                    is_oov: false,
                    is_punct: false,
                }
            } else {
                WordPronunciation {
                    surface: unit.clone(),
                    phonemes: vec![PhonemeId::UNK],
                    is_oov: true,
                    is_punct: false,
                }
            }
        })
        .collect()
}
