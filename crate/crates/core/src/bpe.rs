//! Byte-pair encoding with phonemes as the base units.
//!
//! Learning merges the most frequent adjacent pair inside words (never across
//! them) until the vocabulary reaches its target size. Encoding applies the
//! learned rules in priority order: the earliest rule that matches anywhere in
//! the word is applied at every position, and the scan repeats.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frontend::{g2p, normalize_text, Lexicon};
use crate::vocab::{PhonemeId, PhonemeVocab, SupId};

/// Pronunciation -> corpus frequency.
pub type WordFreqs = BTreeMap<Vec<PhonemeId>, u64>;

const HEADER_MAGIC: &str = "#mpbert-bpe";
const FORMAT_VERSION: &str = "v1";

/// Merges below this corpus frequency are never learned.
pub const MIN_PAIR_FREQUENCY: u64 = 2;

/// A sup-phoneme token and the number of phonemes it covers.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SupPhonemeToken {
    pub id: SupId,
    pub span_len: usize,
}

/// Ordered merge rules plus the sup-phoneme vocabulary they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeTable {
    phonemes: PhonemeVocab,
    merges: Vec<(SupId, SupId)>,
    symbols: Vec<String>,
    index: HashMap<String, SupId>,
    decomposition: Vec<Vec<PhonemeId>>,
    ranks: HashMap<(SupId, SupId), (usize, SupId)>,
    target_size: usize,
}

impl MergeTable {
    /// A table with no merges: specials plus one token per base phoneme.
    pub fn base(phonemes: PhonemeVocab, target_size: usize) -> Result<Self> {
        if target_size < phonemes.len() {
            return Err(Error::Config(format!(
                "target vocabulary size {target_size} is below the base size {}",
                phonemes.len()
            )));
        }
        let symbols: Vec<String> = phonemes.symbols().to_vec();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), SupId(i as u32)))
            .collect();
        let decomposition = (0..symbols.len())
            .map(|i| vec![PhonemeId(i as u32)])
            .collect();
        Ok(Self {
            phonemes,
            merges: Vec::new(),
            symbols,
            index,
            decomposition,
            ranks: HashMap::new(),
            target_size,
        })
    }

    fn merged_symbol(&self, left: SupId, right: SupId) -> String {
        format!("{}-{}", self.symbols[left.index()], self.symbols[right.index()])
    }

    /// Appends a rule. Operands must already exist and must not be specials.
    pub fn push_merge(&mut self, left: SupId, right: SupId) -> Result<SupId> {
        for id in [left, right] {
            if id.index() >= self.symbols.len() {
                return Err(Error::UnknownToken(id.0));
            }
            if id.is_special() {
                return Err(Error::Config(format!("special token {id} cannot be merged")));
            }
        }
        let symbol = self.merged_symbol(left, right);
        if self.index.contains_key(&symbol) {
            return Err(Error::Config(format!("token `{symbol}` already exists")));
        }
        let id = SupId(self.symbols.len() as u32);
        let mut parts = self.decomposition[left.index()].clone();
        parts.extend_from_slice(&self.decomposition[right.index()]);
        self.ranks.insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        self.index.insert(symbol.clone(), id);
        self.symbols.push(symbol);
        self.decomposition.push(parts);
        Ok(id)
    }

    pub fn phoneme_vocab(&self) -> &PhonemeVocab {
        &self.phonemes
    }

    pub fn merges(&self) -> &[(SupId, SupId)] {
        &self.merges
    }

    /// Size of the sup-phoneme vocabulary, specials included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn id(&self, symbol: &str) -> Option<SupId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: SupId) -> Option<&str> {
        self.symbols.get(id.index()).map(String::as_str)
    }

    /// Lowercase display form, e.g. `hh-ah`. Specials keep their symbol.
    pub fn surface(&self, id: SupId) -> Option<String> {
        let sym = self.symbol(id)?;
        Some(if id.is_special() {
            sym.to_string()
        } else {
            sym.to_lowercase()
        })
    }

    /// Rank and result of the rule merging `(left, right)`, if any.
    pub fn rule(&self, left: SupId, right: SupId) -> Option<(usize, SupId)> {
        self.ranks.get(&(left, right)).copied()
    }

    pub fn decomposition_ids(&self, id: SupId) -> Result<&[PhonemeId]> {
        self.decomposition
            .get(id.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownToken(id.0))
    }

    /// Phoneme symbols covered by `id`.
    pub fn decompose(&self, id: SupId) -> Result<Vec<&str>> {
        self.decomposition_ids(id)?
            .iter()
            .map(|&p| self.phonemes.symbol(p).ok_or(Error::UnknownToken(id.0)))
            .collect()
    }

    pub fn span_len(&self, id: SupId) -> usize {
        self.decomposition.get(id.index()).map_or(1, Vec::len)
    }
}

/// Replaces every non-overlapping occurrence of `(left, right)`, scanning left to right.
fn merge_pair_in(seq: &mut Vec<SupId>, left: SupId, right: SupId, merged: SupId) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    *seq = out;
}

/// Counts every word's pronunciation.
pub fn count_words<'a, I>(words: I) -> WordFreqs
where
    I: IntoIterator<Item = &'a [PhonemeId]>,
{
    let mut freqs = WordFreqs::new();
    for w in words {
        *freqs.entry(w.to_vec()).or_insert(0) += 1;
    }
    freqs
}

/// Word frequencies of a text corpus, one sentence per line. Punctuation,
/// out-of-vocabulary words and blank lines are skipped.
pub fn corpus_word_freqs<'a, I>(lines: I, lexicon: &Lexicon, vocab: &PhonemeVocab) -> WordFreqs
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freqs = WordFreqs::new();
    for line in lines {
        let Ok(norm) = normalize_text(line) else {
            continue;
        };
        for w in g2p(&norm, lexicon, vocab) {
            if !w.is_oov && !w.is_punct {
                *freqs.entry(w.phonemes).or_insert(0) += 1;
            }
        }
    }
    freqs
}

struct PairStats {
    counts: HashMap<(SupId, SupId), u64>,
    location: HashMap<(SupId, SupId), BTreeSet<usize>>,
}

impl PairStats {
    fn add_word(&mut self, idx: usize, word: &[SupId], freq: u64) {
        for w in word.windows(2) {
            let pair = (w[0], w[1]);
            *self.counts.entry(pair).or_insert(0) += freq;
            self.location.entry(pair).or_default().insert(idx);
        }
    }

    fn remove_word(&mut self, idx: usize, word: &[SupId], freq: u64) {
        for w in word.windows(2) {
            let pair = (w[0], w[1]);
            if let Some(c) = self.counts.get_mut(&pair) {
                *c -= freq;
                if *c == 0 {
                    self.counts.remove(&pair);
                }
            }
            if let Some(set) = self.location.get_mut(&pair) {
                set.remove(&idx);
                if set.is_empty() {
                    self.location.remove(&pair);
                }
            }
        }
    }
}

/// Learns merge rules from word frequencies until the sup-phoneme vocabulary
/// holds `target_size` tokens (specials included) or no pair occurs at least
/// [`MIN_PAIR_FREQUENCY`] times.
///
/// Pairs are ranked by frequency; ties go to the lexicographically smallest
/// `(left symbol, right symbol)`. A pair whose joined symbol already names a
/// token is skipped.
pub fn learn_bpe(
    word_freqs: &WordFreqs,
    phonemes: PhonemeVocab,
    target_size: usize,
) -> Result<MergeTable> {
    let mut table = MergeTable::base(phonemes, target_size)?;
    let mut words: Vec<Vec<SupId>> = Vec::with_capacity(word_freqs.len());
    let mut freqs: Vec<u64> = Vec::with_capacity(word_freqs.len());
    for (word, &freq) in word_freqs {
        if word.is_empty() {
            return Err(Error::Config("empty word in BPE input".into()));
        }
        if let Some(bad) = word.iter().find(|p| !table.phonemes.contains(**p)) {
            return Err(Error::UnknownToken(bad.0));
        }
        if freq > 0 {
            words.push(word.iter().map(|&p| SupId::from(p)).collect());
            freqs.push(freq);
        }
    }

    let mut stats = PairStats {
        counts: HashMap::new(),
        location: HashMap::new(),
    };
    for (i, w) in words.iter().enumerate() {
        stats.add_word(i, w, freqs[i]);
    }

    while table.len() < target_size {
        let mut best: Option<((SupId, SupId), u64)> = None;
        for (&pair, &count) in &stats.counts {
            if count < MIN_PAIR_FREQUENCY || pair.0.is_special() || pair.1.is_special() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (table.symbols[pair.0.index()].as_str(), table.symbols[pair.1.index()].as_str())
                                < (table.symbols[bp.0.index()].as_str(), table.symbols[bp.1.index()].as_str()))
                }
            };
            if better && !table.index.contains_key(&table.merged_symbol(pair.0, pair.1)) {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), _)) = best else {
            break;
        };
        let merged = table.push_merge(left, right)?;
        let affected: Vec<usize> = stats
            .location
            .get(&(left, right))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for idx in affected {
            stats.remove_word(idx, &words[idx], freqs[idx]);
            merge_pair_in(&mut words[idx], left, right, merged);
            stats.add_word(idx, &words[idx], freqs[idx]);
        }
    }
    Ok(table)
}

/// Splits one word into sup-phoneme tokens by applying rules in learned order.
pub fn encode_word(phonemes: &[PhonemeId], table: &MergeTable) -> Vec<SupPhonemeToken> {
    let mut seq: Vec<SupId> = phonemes.iter().map(|&p| SupId::from(p)).collect();
    loop {
        let best = seq
            .windows(2)
            .filter_map(|w| table.rule(w[0], w[1]).map(|(rank, id)| (rank, w[0], w[1], id)))
            .min_by_key(|&(rank, ..)| rank);
        match best {
            Some((_, left, right, merged)) => merge_pair_in(&mut seq, left, right, merged),
            None => break,
        }
    }
    seq.into_iter()
        .map(|id| SupPhonemeToken {
            id,
            span_len: table.span_len(id),
        })
        .collect()
}

/// Writes the merges file: a version header then one `LEFT RIGHT` rule per line.
pub fn save_merges<W: Write>(table: &MergeTable, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{HEADER_MAGIC} {FORMAT_VERSION} size={} strip_stress={}",
        table.target_size,
        table.phonemes.strip_stress()
    )?;
    for &(l, r) in &table.merges {
        writeln!(out, "{} {}", table.symbols[l.index()], table.symbols[r.index()])?;
    }
    Ok(())
}

/// Fields of a merges-file header line.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct MergesHeader {
    pub size: usize,
    pub strip_stress: bool,
}

pub fn parse_merges_header(line: &str) -> Result<MergesHeader> {
    let bad = |msg: &str| Error::Parse {
        line: 1,
        msg: msg.to_string(),
    };
    let mut fields = line.split_whitespace();
    if fields.next() != Some(HEADER_MAGIC) {
        return Err(bad("missing merges header"));
    }
    match fields.next() {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(Error::VersionMismatch(other.to_string())),
        None => return Err(bad("missing version")),
    }
    let mut size = None;
    let mut strip_stress = None;
    for field in fields {
        match field.split_once('=') {
            Some(("size", v)) => size = Some(v.parse().map_err(|_| bad("bad size"))?),
            Some(("strip_stress", v)) => {
                strip_stress = Some(v.parse().map_err(|_| bad("bad strip_stress"))?)
            }
            _ => return Err(bad(&format!("unexpected header field `{field}`"))),
        }
    }
    Ok(MergesHeader {
        size: size.ok_or_else(|| bad("missing size"))?,
        strip_stress: strip_stress.ok_or_else(|| bad("missing strip_stress"))?,
    })
}

/// Reads a merges file over the given base phoneme inventory.
pub fn load_merges<R: BufRead>(source: R, phonemes: &PhonemeVocab) -> Result<MergeTable> {
    let mut lines = source.lines();
    let header = match lines.next() {
        Some(line) => parse_merges_header(&line?)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty merges file".into(),
            })
        }
    };
    if header.strip_stress != phonemes.strip_stress() {
        return Err(Error::Parse {
            line: 1,
            msg: "strip_stress does not match the phoneme inventory".into(),
        });
    }
    let mut table = MergeTable::base(phonemes.clone(), header.size).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [left, right] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected `LEFT RIGHT`".into(),
            });
        };
        let lookup = |s: &str| {
            table.id(s).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("merge references unseen operand `{s}`"),
            })
        };
        let (l, r) = (lookup(left)?, lookup(right)?);
        table.push_merge(l, r).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
    }
    if table.len() > table.target_size {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{} tokens exceed declared size {}", table.len(), table.target_size),
        });
    }
    Ok(table)
}

/// Named vocabulary sizes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum VocabSize {
    /// 3,000 tokens.
    Small,
    /// 30,000 tokens.
    Large,
    /// Base vocabulary plus 64 merges.
    Tiny,
    Exact(usize),
}

impl VocabSize {
    pub const TINY_MERGES: usize = 64;

    pub fn resolve(self, base_len: usize) -> usize {
        match self {
            VocabSize::Small => 3_000,
            VocabSize::Large => 30_000,
            VocabSize::Tiny => base_len + Self::TINY_MERGES,
            VocabSize::Exact(n) => n,
        }
    }
}

impl FromStr for VocabSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(VocabSize::Tiny),
            "3000" => Ok(VocabSize::Small),
            "30000" => Ok(VocabSize::Large),
            n => n
                .parse()
                .map(VocabSize::Exact)
                .map_err(|_| format!("invalid vocabulary size `{s}`")),
        }
    }
}
