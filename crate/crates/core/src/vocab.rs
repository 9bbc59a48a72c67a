//! Phoneme inventory and the id newtypes shared by both token streams.
//!
//! Both vocabularies reserve the same leading ids for the special tokens, so
//! `PhonemeId::MASK.0 == SupId::MASK.0` and so on. Base phonemes keep their
//! phoneme id when they appear as single-phoneme sup tokens.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

macro_rules! token_id {
    ($name:ident) => {
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            pub const PAD: $name = $name(0);
            pub const UNK: $name = $name(1);
            pub const MASK: $name = $name(2);
            pub const BOS: $name = $name(3);
            pub const EOS: $name = $name(4);

            pub fn index(self) -> usize {
                self.0 as usize
            }

            /// PAD, UNK, MASK, BOS or EOS.
            pub fn is_special(self) -> bool {
                self.0 < NUM_SPECIALS as u32
            }

            /// Tokens that are never selected for masking.
            pub fn is_boundary(self) -> bool {
                self == Self::BOS || self == Self::EOS || self == Self::PAD
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

token_id!(PhonemeId);
token_id!(SupId);

impl From<PhonemeId> for SupId {
    fn from(p: PhonemeId) -> Self {
        SupId(p.0)
    }
}

pub const NUM_SPECIALS: usize = 5;

/// Symbols of the special tokens, in id order.
pub const SPECIAL_SYMBOLS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<mask>", "<s>", "</s>"];

/// Punctuation marks kept by the normalizer and the phoneme each maps to.
pub const PUNCTUATION: [(char, &str); 7] = [
    ('.', "PUNCT_PERIOD"),
    (',', "PUNCT_COMMA"),
    ('!', "PUNCT_EXCLAIM"),
    ('?', "PUNCT_QUESTION"),
    (';', "PUNCT_SEMICOLON"),
    (':', "PUNCT_COLON"),
    ('\'', "PUNCT_APOSTROPHE"),
];

pub const ARPABET_VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

pub const ARPABET_CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH",
    "T", "TH", "V", "W", "Y", "Z", "ZH",
];

pub fn punctuation_symbol(c: char) -> Option<&'static str> {
    PUNCTUATION.iter().find(|(p, _)| *p == c).map(|(_, s)| *s)
}

pub fn is_punctuation(c: char) -> bool {
    punctuation_symbol(c).is_some()
}

/// Removes a trailing ARPAbet stress digit (`AH0` -> `AH`).
pub fn strip_stress(symbol: &str) -> &str {
    symbol.trim_end_matches(['0', '1', '2'])
}

/// Ordered phoneme inventory: specials, punctuation phonemes, then base phonemes.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    index: HashMap<String, PhonemeId>,
    strip_stress: bool,
}

impl PhonemeVocab {
    /// The ARPAbet inventory. With `strip_stress` off, every vowel also gets
    /// its three stressed variants.
    pub fn arpabet(strip_stress: bool) -> Self {
        let mut phones: Vec<String> = Vec::new();
        for v in ARPABET_VOWELS {
            phones.push(v.to_string());
            if !strip_stress {
                for s in ['0', '1', '2'] {
                    phones.push(format!("{v}{s}"));
                }
            }
        }
        phones.extend(ARPABET_CONSONANTS.iter().map(|c| c.to_string()));
        Self::build(phones, strip_stress).expect("ARPAbet inventory is well formed")
    }

    /// A custom inventory. Specials and punctuation phonemes are added in front.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::build(symbols.into_iter().map(Into::into).collect(), true)
    }

    fn build(base: Vec<String>, strip_stress: bool) -> Result<Self> {
        let mut symbols: Vec<String> = SPECIAL_SYMBOLS.iter().map(|s| s.to_string()).collect();
        symbols.extend(PUNCTUATION.iter().map(|(_, s)| s.to_string()));
        symbols.extend(base);
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) || s.contains('-') {
                return Err(Error::Config(format!("invalid phoneme symbol `{s}`")));
            }
            if index.insert(s.clone(), PhonemeId(i as u32)).is_some() {
                return Err(Error::Config(format!("duplicate phoneme symbol `{s}`")));
            }
        }
        Ok(Self {
            symbols,
            index,
            strip_stress,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn strip_stress(&self) -> bool {
        self.strip_stress
    }

    pub fn id(&self, symbol: &str) -> Option<PhonemeId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: PhonemeId) -> Option<&str> {
        self.symbols.get(id.index()).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, id: PhonemeId) -> bool {
        id.index() < self.symbols.len()
    }

    pub fn punct_id(&self, mark: char) -> Option<PhonemeId> {
        punctuation_symbol(mark).and_then(|s| self.id(s))
    }

    /// Every non-special id, in order.
    pub fn base_ids(&self) -> impl Iterator<Item = PhonemeId> + '_ {
        (NUM_SPECIALS..self.symbols.len()).map(|i| PhonemeId(i as u32))
    }

    /// Number of non-special symbols.
    pub fn base_len(&self) -> usize {
        self.symbols.len() - NUM_SPECIALS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_lead_both_id_spaces() {
        let v = PhonemeVocab::arpabet(true);
        for (i, s) in SPECIAL_SYMBOLS.iter().enumerate() {
            assert_eq!(v.id(s), Some(PhonemeId(i as u32)));
        }
        assert_eq!(PhonemeId::MASK.0, SupId::MASK.0);
        assert_eq!(v.symbol(PhonemeId::BOS), Some("<s>"));
    }

    #[test]
    fn arpabet_sizes() {
        let v = PhonemeVocab::arpabet(true);
        assert_eq!(v.len(), NUM_SPECIALS + PUNCTUATION.len() + 39);
        let stressed = PhonemeVocab::arpabet(false);
        assert_eq!(stressed.len(), v.len() + 45);
        assert!(stressed.id("AH0").is_some());
        assert!(v.id("AH0").is_none());
    }

    #[test]
    fn stress_stripping() {
        assert_eq!(strip_stress("OW1"), "OW");
        assert_eq!(strip_stress("HH"), "HH");
    }

    #[test]
    fn duplicate_symbols_rejected() {
        assert!(PhonemeVocab::from_symbols(["A", "A"]).is_err());
        assert!(PhonemeVocab::from_symbols(["<mask>"]).is_err());
        assert!(PhonemeVocab::from_symbols(["A-B"]).is_err());
    }
}
