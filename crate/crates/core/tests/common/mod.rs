#![allow(dead_code)]

pub mod oracle;

use mpbert::bpe::{corpus_word_freqs, learn_bpe, MergeTable, VocabSize};
use mpbert::synthetic::{SyntheticConfig, SyntheticCorpus};
use mpbert::train::PreparedCorpus;

pub struct Fixture {
    pub corpus: SyntheticCorpus,
    pub table: MergeTable,
    pub prepared: PreparedCorpus,
}

pub fn fixture(cfg: &SyntheticConfig, size: VocabSize, max_len: usize) -> Fixture {
    let corpus = SyntheticCorpus::generate(cfg);
    let lines = || corpus.sentences.iter().map(String::as_str);
    let freqs = corpus_word_freqs(lines(), &corpus.lexicon, &corpus.vocab);
    let target = size.resolve(corpus.vocab.len());
    let table = learn_bpe(&freqs, corpus.vocab.clone(), target).unwrap();
    let prepared = PreparedCorpus::from_lines(lines(), &corpus.lexicon, &table, max_len).unwrap();
    Fixture {
        corpus,
        table,
        prepared,
    }
}

use mpbert::masking::{select_masks, MaskMode, MaskPolicy, MaskedExample};
use mpbert::model::{backward, forward_with_cache, mlm_heads, EncoderParams, ModelConfig, ModelInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Parameters with larger spread than the training init so every nonlinearity is exercised.
pub fn spread_params(cfg: &ModelConfig, fx: &Fixture, std: f64, seed: u64) -> EncoderParams {
    let mut p = EncoderParams::zeros(cfg, fx.table.phoneme_vocab().len(), fx.table.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    for (name, mut t) in p.tensors_mut() {
        let base = if name.ends_with(".gain") { 1.0 } else { 0.0 };
        t.iter_mut().for_each(|v| *v = base + normal.sample(&mut rng));
    }
    p
}

/// Masked examples cycling through all four regimes, each with at least one target.
pub fn gradcheck_examples(fx: &Fixture, n: usize) -> Vec<MaskedExample> {
    let modes = [
        MaskMode::Mixed,
        MaskMode::PhonemeOnly,
        MaskMode::MaskAllSup,
        MaskMode::MaskAllPhoneme,
    ];
    let mut out = Vec::new();
    let mut seed = 0;
    for i in 0..n {
        let seq = &fx.prepared.train[i % fx.prepared.train.len()];
        loop {
            seed += 1;
            let policy = MaskPolicy {
                ratio: 0.3,
                mode: modes[i % 4],
                whole_word: i % 3 != 0,
                seed,
                ..Default::default()
            };
            let ex = select_masks(seq, &fx.table, &policy);
            if ex.phoneme_target_count() > 0 {
                out.push(ex);
                break;
            }
        }
    }
    out
}

/// Loss of one example and the sign pattern of every ReLU input.
fn probe(e: &MaskedExample, p: &EncoderParams, cfg: &ModelConfig) -> (f64, Vec<bool>) {
    let (hidden, cache) = forward_with_cache(ModelInput::from(e), p, cfg, None).unwrap();
    let loss = mlm_heads(&hidden, e, p).loss_total;
    let signs = (0..cfg.layers)
        .flat_map(|l| cache.relu_inputs(l).iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect();
    (loss, signs)
}

pub struct BlockCheck {
    pub name: String,
    pub rel_error: f64,
    /// Compared (entry, example) pairs.
    pub checked: usize,
    /// Pairs whose `±h` probes straddled a ReLU kink.
    pub kinks: usize,
}

/// Gradient magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Central differences against the analytic gradient, example by example.
///
/// Per block, `per_block` entries are probed: half the largest analytic
/// entries of the batch mean, half random. A probe pair that puts some ReLU
/// input on different sides of zero is not differentiable on the probe
/// interval and is skipped. For each example the block error is
/// `max |analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`; the
/// reported error is the maximum over examples.
pub fn gradient_check(
    exs: &[MaskedExample],
    params: &EncoderParams,
    cfg: &ModelConfig,
    h: f64,
    per_block: usize,
) -> Vec<BlockCheck> {
    let flat = |p: &EncoderParams| -> Vec<Vec<f64>> {
        p.tensors()
            .into_iter()
            .map(|(_, t)| t.iter().copied().collect())
            .collect()
    };
    let per_example: Vec<Vec<Vec<f64>>> = exs
        .iter()
        .map(|e| flat(&backward(e, params, cfg, None).unwrap().1))
        .collect();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let values = flat(params);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut work = params.clone();
    let mut out = Vec::new();
    for (b, name) in names.iter().enumerate() {
        let len = values[b].len();
        let mean: Vec<f64> = (0..len)
            .map(|i| per_example.iter().map(|g| g[b][i].abs()).sum::<f64>())
            .collect();
        let mut entries: Vec<usize> = (0..len).collect();
        entries.sort_by(|&x, &y| mean[y].total_cmp(&mean[x]).then(x.cmp(&y)));
        entries.truncate(per_block / 2);
        while entries.len() < per_block.min(len) {
            let i = rng.random_range(0..len);
            if !entries.contains(&i) {
                entries.push(i);
            }
        }
        let mut worst = vec![0.0f64; exs.len()];
        let mut scale = vec![0.0f64; exs.len()];
        let (mut checked, mut kinks) = (0, 0);
        for &i in &entries {
            let orig = values[b][i];
            let set = |w: &mut EncoderParams, v: f64| {
                *w.tensors_mut()[b].1.iter_mut().nth(i).unwrap() = v;
            };
            for (k, e) in exs.iter().enumerate() {
                set(&mut work, orig + h);
                let (lp, sp) = probe(e, &work, cfg);
                set(&mut work, orig - h);
                let (lm, sm) = probe(e, &work, cfg);
                set(&mut work, orig);
                if sp != sm {
                    kinks += 1;
                    continue;
                }
                checked += 1;
                let a = per_example[k][b][i];
                let numeric = (lp - lm) / (2.0 * h);
                worst[k] = worst[k].max((a - numeric).abs());
                scale[k] = scale[k].max(a.abs()).max(numeric.abs());
            }
        }
        let rel_error = worst
            .iter()
            .zip(&scale)
            .map(|(w, s)| w / s.max(GRAD_FLOOR))
            .fold(0.0, f64::max);
        out.push(BlockCheck {
            name: name.clone(),
            rel_error,
            checked,
            kinks,
        });
    }
    out
}
