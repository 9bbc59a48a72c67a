//! Seeded synthetic corpora: a pseudo-word lexicon over ARPAbet syllables and
//! sentences drawn from a sparse bigram grammar.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::frontend::Lexicon;
use crate::vocab::{PhonemeId, PhonemeVocab, ARPABET_CONSONANTS, ARPABET_VOWELS};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub words: usize,
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Allowed next words per word.
    pub successors: usize,
    /// Zipf exponent of the successor and sentence-start draws; 0 gives uniform draws.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            words: 300,
            sentences: 5_000,
            min_words: 4,
            max_words: 8,
            successors: 3,
            zipf: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub vocab: PhonemeVocab,
    pub lexicon: Lexicon,
    pub sentences: Vec<String>,
}

fn spelling(mut i: usize) -> String {
    let mut s = String::from("w");
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            return s;
        }
    }
}

fn pseudo_word<R: Rng>(rng: &mut R) -> Vec<&'static str> {
    let syllables = rng.random_range(1..=3);
    let mut out = Vec::new();
    for _ in 0..syllables {
        out.push(*ARPABET_CONSONANTS.choose(rng).unwrap());
        out.push(*ARPABET_VOWELS.choose(rng).unwrap());
        if rng.random_bool(0.5) {
            out.push(*ARPABET_CONSONANTS.choose(rng).unwrap());
        }
    }
    out
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        assert!(cfg.words > 0 && cfg.successors > 0 && cfg.min_words >= 1);
        assert!(cfg.min_words <= cfg.max_words);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocab = PhonemeVocab::arpabet(true);
        let mut lexicon = Lexicon::new();
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(cfg.words);
        while words.len() < cfg.words {
            let pron = pseudo_word(&mut rng);
            if !seen.insert(pron.clone()) {
                continue;
            }
            let ids: Vec<PhonemeId> = pron.iter().map(|p| vocab.id(p).unwrap()).collect();
            let word = spelling(words.len());
            lexicon.insert(&word, ids).unwrap();
            words.push(word);
        }
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            if cfg.zipf > 0.0 {
                let z = Zipf::new(cfg.words as f64, cfg.zipf).expect("valid Zipf parameters");
                (z.sample(rng) as usize - 1).min(cfg.words - 1)
            } else {
                rng.random_range(0..cfg.words)
            }
        };
        let next: Vec<Vec<usize>> = (0..cfg.words)
            .map(|_| (0..cfg.successors).map(|_| pick(&mut rng)).collect())
            .collect();
        let sentences = (0..cfg.sentences)
            .map(|_| {
                let n = rng.random_range(cfg.min_words..=cfg.max_words);
                let mut w = pick(&mut rng);
                let mut s = words[w].clone();
                for _ in 1..n {
                    w = *next[w].choose(&mut rng).unwrap();
                    s.push(' ');
                    s.push_str(&words[w]);
                }
                s.push(if rng.random_bool(0.8) { '.' } else { '?' });
                s
            })
            .collect();
        Self {
            vocab,
            lexicon,
            sentences,
        }
    }

    /// The lexicon in dictionary format, sorted by headword.
    pub fn lexicon_text(&self) -> String {
        let mut entries: Vec<_> = self.lexicon.iter().collect();
        entries.sort();
        let mut out = String::new();
        for (word, phonemes) in entries {
            let _ = write!(out, "{}  ", word.to_uppercase());
            let syms: Vec<&str> = phonemes.iter().map(|&p| self.vocab.symbol(p).unwrap()).collect();
            out.push_str(&syms.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn corpus_text(&self) -> String {
        let mut out = self.sentences.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{g2p, load_lexicon, normalize_text};

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig {
            sentences: 20,
            ..Default::default()
        };
        let a = SyntheticCorpus::generate(&cfg);
        let b = SyntheticCorpus::generate(&cfg);
        assert_eq!(a.sentences, b.sentences);
        assert_eq!(a.lexicon_text(), b.lexicon_text());
        let c = SyntheticCorpus::generate(&SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(a.sentences, c.sentences);
    }

    #[test]
    fn every_word_is_in_the_lexicon() {
        let corpus = SyntheticCorpus::generate(&SyntheticConfig {
            sentences: 50,
            ..Default::default()
        });
        let lex = load_lexicon(corpus.lexicon_text().as_bytes(), &corpus.vocab).unwrap();
        assert_eq!(lex.len(), 300);
        for s in &corpus.sentences {
            let norm = normalize_text(s).unwrap();
            assert!(g2p(&norm, &lex, &corpus.vocab).iter().all(|w| !w.is_oov));
        }
    }
}
