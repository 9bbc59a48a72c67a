//! MLM accuracy reports and unmasked embedding export.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bpe::MergeTable;
use crate::error::Result;
use crate::frontend::{g2p, normalize_text, Lexicon};
use crate::masking::{select_masks, MaskPolicy};
use crate::mixing::{build_mixed_sequence, MixedSequence};
use crate::model::{encoder_forward, evaluate_example, EncoderParams, ModelConfig, ModelInput};
use crate::train::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MlmReport {
    pub mode: String,
    pub acc_phoneme: f64,
    /// `None` when the regime has no sup-phoneme targets.
    pub acc_sup: Option<f64>,
    pub loss_phoneme: f64,
    pub loss_sup: f64,
    pub loss_total: f64,
    pub phoneme_targets: usize,
    pub sup_targets: usize,
    pub sequences: usize,
    pub fingerprint: String,
}

impl MlmReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hex digest identifying the model shape, vocabularies and masking policy.
pub fn fingerprint(cfg: &ModelConfig, table: &MergeTable, policy: &MaskPolicy) -> String {
    let mut h = Sha256::new();
    h.update(cfg.to_document());
    h.update(format!("phoneme_vocab={}\nsup_vocab={}\n", table.phoneme_vocab().len(), table.len()));
    h.update(format!("{policy:?}"));
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Masks every sequence under `policy` (sequence `i` uses a seed derived from
/// `policy.seed` and `i`) and scores both heads in inference mode.
pub fn eval_mlm(
    params: &EncoderParams,
    cfg: &ModelConfig,
    sequences: &[MixedSequence],
    table: &MergeTable,
    policy: &MaskPolicy,
) -> Result<MlmReport> {
    policy.validate()?;
    let (mut ph_n, mut ph_ok, mut ph_nll) = (0usize, 0usize, 0.0);
    let (mut sup_n, mut sup_ok, mut sup_nll) = (0usize, 0usize, 0.0);
    for (i, seq) in sequences.iter().enumerate() {
        let p = policy.clone().with_seed(derive_seed(policy.seed, i as u64, 0x5eed));
        let ex = select_masks(seq, table, &p);
        let out = evaluate_example(&ex, params, cfg)?;
        let (np, ns) = (out.phoneme_targets.len(), out.sup_targets.len());
        debug_assert_eq!(np, ex.phoneme_target_count());
        ph_n += np;
        ph_ok += out.phoneme_correct();
        ph_nll += out.loss_phoneme * np as f64;
        sup_n += ns;
        sup_ok += out.sup_correct();
        sup_nll += out.loss_sup * ns as f64;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let loss_phoneme = if ph_n == 0 { 0.0 } else { ph_nll / ph_n as f64 };
    let loss_sup = if sup_n == 0 { 0.0 } else { sup_nll / sup_n as f64 };
    Ok(MlmReport {
        mode: policy.mode.to_string(),
        acc_phoneme: ratio(ph_ok, ph_n),
        acc_sup: (sup_n > 0).then(|| ratio(sup_ok, sup_n)),
        loss_phoneme,
        loss_sup,
        loss_total: loss_phoneme + loss_sup,
        phoneme_targets: ph_n,
        sup_targets: sup_n,
        sequences: sequences.len(),
        fingerprint: fingerprint(cfg, table, policy),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositionInfo {
    pub phoneme: String,
    pub sup: String,
    pub word: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpanInfo {
    pub token: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingExport {
    pub words: Vec<String>,
    pub positions: Vec<PositionInfo>,
    /// Sup-phoneme tokens with their half-open position ranges, BOS/EOS excluded.
    pub spans: Vec<SpanInfo>,
    pub hidden: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// Encodes `text` without masking and returns one hidden row per position.
pub fn export_embeddings(
    params: &EncoderParams,
    cfg: &ModelConfig,
    text: &str,
    lexicon: &Lexicon,
    table: &MergeTable,
) -> Result<EmbeddingExport> {
    let vocab = table.phoneme_vocab();
    let norm = normalize_text(text)?;
    let prons = g2p(&norm, lexicon, vocab);
    let seq = build_mixed_sequence(&prons, table, cfg.max_len)?;
    let hidden = encoder_forward(ModelInput::from(&seq), params, cfg, None)?;

    let word_of_token = seq.word_of_token();
    let mut positions = Vec::with_capacity(seq.len());
    for (j, span) in seq.sup_spans.iter().enumerate() {
        let word = (!span.id.is_boundary()).then(|| word_of_token[j] - 1);
        for t in span.positions() {
            positions.push(PositionInfo {
                phoneme: vocab.symbol(seq.phoneme_ids[t]).unwrap_or("<unk>").to_string(),
                sup: table.surface(span.id).unwrap_or_default(),
                word,
            });
        }
    }
    let spans = seq
        .sup_spans
        .iter()
        .filter(|s| !s.id.is_boundary())
        .map(|s| SpanInfo {
            token: table.surface(s.id).unwrap_or_default(),
            start: s.start,
            end: s.end,
        })
        .collect();
    Ok(EmbeddingExport {
        words: prons.into_iter().map(|p| p.surface).collect(),
        positions,
        spans,
        hidden: hidden.ncols(),
        matrix: hidden.rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}
