//! Brute-force reference implementations over symbol strings.

use std::collections::{BTreeMap, HashSet};

/// Words as symbol lists with their frequencies.
pub type Corpus = Vec<(Vec<String>, u64)>;

fn join(l: &str, r: &str) -> String {
    format!("{l}-{r}")
}

fn apply(word: &[String], l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == l && word[i + 1] == r {
            out.push(join(l, r));
            i += 2;
        } else {
            out.push(word[i].clone());
            i += 1;
        }
    }
    out
}

/// Recounts every adjacent pair each round and merges the most frequent one
/// (ties to the smallest `(left, right)`), skipping pairs whose joined symbol
/// is already known, until `merges` rules exist or no pair occurs twice.
pub fn learn(corpus: &Corpus, base: &[String], merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = corpus.clone();
    let mut known: HashSet<String> = base.iter().cloned().collect();
    let mut out = Vec::new();
    while out.len() < merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, f) in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0].clone(), pair[1].clone())).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .filter(|((l, r), c)| *c >= 2 && !known.contains(&join(l, r)))
            .fold(None::<((String, String), u64)>, |acc, (p, c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            });
        let Some(((l, r), _)) = best else { break };
        for (w, _) in words.iter_mut() {
            *w = apply(w, &l, &r);
        }
        known.insert(join(&l, &r));
        out.push((l, r));
    }
    out
}

/// Applies every rule, in learned order, across the whole word.
pub fn encode(word: &[String], merges: &[(String, String)]) -> Vec<String> {
    let mut w = word.to_vec();
    for (l, r) in merges {
        w = apply(&w, l, r);
    }
    w
}
