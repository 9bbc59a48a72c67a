//! Masked-LM example generation with consistent phoneme / sup-phoneme masking.
//!
//! In the default `Mixed` mode, sup-phoneme tokens are selected and every
//! phoneme under a selected token is masked with it, so neither stream can
//! leak the answer to the other. The other modes reproduce the ablation
//! settings: phoneme-only input, and evaluation with one stream fully masked.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bpe::MergeTable;
use crate::error::{Error, Result};
use crate::mixing::{MixedSequence, SupSpan};
use crate::vocab::{PhonemeId, SupId, NUM_SPECIALS};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Sup-phoneme selection, consistent masking of both streams.
    Mixed,
    /// Sup stream replaced by a neutral id; phonemes selected individually
    /// (then closed over whole words under `whole_word`).
    PhonemeOnly,
    /// Phoneme selection as in `PhonemeOnly`, every sup token masked.
    MaskAllSup,
    /// Sup-phoneme selection as in `Mixed`, every phoneme masked.
    MaskAllPhoneme,
}

impl MaskMode {
    /// Whether masking units are sup tokens (as opposed to single phonemes).
    pub fn selects_sup_tokens(self) -> bool {
        matches!(self, MaskMode::Mixed | MaskMode::MaskAllPhoneme)
    }
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "mixed" => Ok(MaskMode::Mixed),
            "phoneme-only" => Ok(MaskMode::PhonemeOnly),
            "mask-all-sup" => Ok(MaskMode::MaskAllSup),
            "mask-all-phoneme" => Ok(MaskMode::MaskAllPhoneme),
            _ => Err(format!("unknown mask mode `{s}`")),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Mixed => "mixed",
            MaskMode::PhonemeOnly => "phoneme-only",
            MaskMode::MaskAllSup => "mask-all-sup",
            MaskMode::MaskAllPhoneme => "mask-all-phoneme",
        })
    }
}

/// Probabilities of the three corruption actions for a selected unit.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct ActionSplit {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for ActionSplit {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct MaskPolicy {
    pub ratio: f64,
    pub split: ActionSplit,
    pub whole_word: bool,
    pub mode: MaskMode,
    pub seed: u64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            ratio: 0.15,
            split: ActionSplit::default(),
            whole_word: true,
            mode: MaskMode::Mixed,
            seed: 0,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1]", self.ratio)));
        }
        let s = self.split;
        if [s.mask, s.random, s.keep].iter().any(|p| !(0.0..=1.0).contains(p))
            || (s.mask + s.random + s.keep - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("action split must be probabilities summing to 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Corrupted input streams plus what the model must predict.
///
/// `sup_masked` and `pos_masked` flag prediction targets. In `Mixed` mode they
/// coincide with the corrupted units; in the fully-masked evaluation modes the
/// whole other stream is corrupted but only the selected units are scored.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedExample {
    pub mode: MaskMode,
    pub input_phoneme_ids: Vec<PhonemeId>,
    pub input_sup_ids_upsampled: Vec<SupId>,
    pub target_phoneme_ids: Vec<PhonemeId>,
    /// Original id of every sup token.
    pub target_sup_ids: Vec<SupId>,
    pub sup_spans: Vec<SupSpan>,
    pub sup_masked: Vec<bool>,
    pub pos_masked: Vec<bool>,
    /// Action drawn for each selected sup token (sup-level modes).
    pub sup_actions: Vec<Option<MaskAction>>,
    /// Action drawn for each selected position (phoneme-level modes).
    pub pos_actions: Vec<Option<MaskAction>>,
}

impl MaskedExample {
    pub fn len(&self) -> usize {
        self.input_phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_phoneme_ids.is_empty()
    }

    pub fn phoneme_target_count(&self) -> usize {
        self.pos_masked.iter().filter(|&&m| m).count()
    }

    pub fn sup_target_count(&self) -> usize {
        self.sup_masked.iter().filter(|&&m| m).count()
    }

    /// Units eligible for selection and the actions drawn for them.
    fn selection_units(&self) -> (usize, Vec<MaskAction>) {
        if self.mode.selects_sup_tokens() {
            let eligible = self.target_sup_ids.iter().filter(|s| !s.is_boundary()).count();
            (eligible, self.sup_actions.iter().flatten().copied().collect())
        } else {
            let eligible = self
                .target_phoneme_ids
                .iter()
                .filter(|p| !p.is_boundary())
                .count();
            (eligible, self.pos_actions.iter().flatten().copied().collect())
        }
    }
}

fn draw_action<R: Rng>(rng: &mut R, split: ActionSplit) -> MaskAction {
    let u: f64 = rng.random();
    if u < split.mask {
        MaskAction::Mask
    } else if u < split.mask + split.random {
        MaskAction::Random
    } else {
        MaskAction::Keep
    }
}

fn random_phoneme<R: Rng>(rng: &mut R, vocab_len: usize) -> PhonemeId {
    PhonemeId(rng.random_range(NUM_SPECIALS..vocab_len) as u32)
}

fn random_sup<R: Rng>(rng: &mut R, vocab_len: usize) -> SupId {
    SupId(rng.random_range(NUM_SPECIALS..vocab_len) as u32)
}

/// Bernoulli selection over non-boundary sup tokens, closed over whole words when asked.
fn select_sup_tokens<R: Rng>(seq: &MixedSequence, policy: &MaskPolicy, rng: &mut R) -> Vec<bool> {
    let mut hit: Vec<bool> = seq
        .sup_spans
        .iter()
        .map(|s| !s.id.is_boundary() && rng.random_bool(policy.ratio))
        .collect();
    if policy.whole_word {
        for &(start, end) in &seq.word_spans {
            if hit[start..end].iter().any(|&h| h) {
                for j in start..end {
                    hit[j] = !seq.sup_spans[j].id.is_boundary();
                }
            }
        }
    }
    hit
}

/// Bernoulli selection over non-boundary positions, closed over whole words when asked.
fn select_phonemes<R: Rng>(seq: &MixedSequence, policy: &MaskPolicy, rng: &mut R) -> Vec<usize> {
    let mut hit: Vec<bool> = seq
        .phoneme_ids
        .iter()
        .map(|p| !p.is_boundary() && rng.random_bool(policy.ratio))
        .collect();
    if policy.whole_word {
        for &(start, end) in &seq.word_spans {
            let positions = seq.sup_spans[start].start..seq.sup_spans[end - 1].end;
            if hit[positions.clone()].iter().any(|&h| h) {
                for t in positions {
                    hit[t] = !seq.phoneme_ids[t].is_boundary();
                }
            }
        }
    }
    (0..hit.len()).filter(|&t| hit[t]).collect()
}

/// Draws the masks for one sequence. The result depends only on `(seq, table, policy)`.
pub fn select_masks(seq: &MixedSequence, table: &MergeTable, policy: &MaskPolicy) -> MaskedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let n_ph = table.phoneme_vocab().len();
    let n_sup = table.len();
    let t_len = seq.len();
    let n_tok = seq.sup_spans.len();

    let mut ex = MaskedExample {
        mode: policy.mode,
        input_phoneme_ids: seq.phoneme_ids.clone(),
        input_sup_ids_upsampled: seq.sup_ids_upsampled.clone(),
        target_phoneme_ids: seq.phoneme_ids.clone(),
        target_sup_ids: seq.sup_spans.iter().map(|s| s.id).collect(),
        sup_spans: seq.sup_spans.clone(),
        sup_masked: vec![false; n_tok],
        pos_masked: vec![false; t_len],
        sup_actions: vec![None; n_tok],
        pos_actions: vec![None; t_len],
    };

    if policy.mode.selects_sup_tokens() {
        let hit = select_sup_tokens(seq, policy, &mut rng);
        for (j, span) in seq.sup_spans.iter().enumerate() {
            if !hit[j] {
                continue;
            }
            let action = draw_action(&mut rng, policy.split);
            ex.sup_masked[j] = true;
            ex.sup_actions[j] = Some(action);
            ex.pos_masked[span.positions()].iter_mut().for_each(|m| *m = true);
            match action {
                MaskAction::Mask => {
                    for t in span.positions() {
                        ex.input_sup_ids_upsampled[t] = SupId::MASK;
                        ex.input_phoneme_ids[t] = PhonemeId::MASK;
                    }
                }
                MaskAction::Random => {
                    let r = random_sup(&mut rng, n_sup);
                    for t in span.positions() {
                        ex.input_sup_ids_upsampled[t] = r;
                        ex.input_phoneme_ids[t] = random_phoneme(&mut rng, n_ph);
                    }
                }
                MaskAction::Keep => {}
            }
        }
        if policy.mode == MaskMode::MaskAllPhoneme {
            for (t, p) in ex.input_phoneme_ids.iter_mut().enumerate() {
                if !seq.phoneme_ids[t].is_boundary() {
                    *p = PhonemeId::MASK;
                }
            }
        }
    } else {
        for t in select_phonemes(seq, policy, &mut rng) {
            let action = draw_action(&mut rng, policy.split);
            ex.pos_masked[t] = true;
            ex.pos_actions[t] = Some(action);
            match action {
                MaskAction::Mask => ex.input_phoneme_ids[t] = PhonemeId::MASK,
                MaskAction::Random => ex.input_phoneme_ids[t] = random_phoneme(&mut rng, n_ph),
                MaskAction::Keep => {}
            }
        }
        match policy.mode {
            MaskMode::PhonemeOnly => ex.input_sup_ids_upsampled.fill(SupId::PAD),
            MaskMode::MaskAllSup => {
                for (j, span) in seq.sup_spans.iter().enumerate() {
                    if span.id.is_boundary() {
                        continue;
                    }
                    for t in span.positions() {
                        ex.input_sup_ids_upsampled[t] = SupId::MASK;
                    }
                    ex.sup_masked[j] = ex.pos_masked[span.positions()].iter().any(|&m| m);
                }
            }
            _ => unreachable!("sup-level modes handled above"),
        }
    }
    ex
}

/// Empirical masking rates over a collection of examples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaskStats {
    pub eligible: usize,
    pub masked: usize,
    pub masked_fraction: f64,
    /// MASK / RANDOM / KEEP fractions among masked units; `None` if nothing was masked.
    pub action_fractions: Option<(f64, f64, f64)>,
}

pub fn mask_statistics<'a, I>(examples: I) -> Result<MaskStats>
where
    I: IntoIterator<Item = &'a MaskedExample>,
{
    let mut eligible = 0usize;
    let mut counts = [0usize; 3];
    let mut seen = false;
    for ex in examples {
        seen = true;
        let (e, actions) = ex.selection_units();
        eligible += e;
        for a in actions {
            counts[a as usize] += 1;
        }
    }
    if !seen {
        return Err(Error::EmptyInput);
    }
    let masked: usize = counts.iter().sum();
    let masked_fraction = if eligible == 0 {
        0.0
    } else {
        masked as f64 / eligible as f64
    };
    let action_fractions = (masked > 0).then(|| {
        let m = masked as f64;
        (counts[0] as f64 / m, counts[1] as f64 / m, counts[2] as f64 / m)
    });
    Ok(MaskStats {
        eligible,
        masked,
        masked_fraction,
        action_fractions,
    })
}
