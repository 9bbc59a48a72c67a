//! Corpus preparation and the AdamW pre-training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bpe::MergeTable;
use crate::error::{Error, Result};
use crate::eval::{eval_mlm, MlmReport};
use crate::frontend::{g2p, normalize_text, Lexicon};
use crate::masking::{select_masks, MaskPolicy};
use crate::mixing::{build_mixed_sequence, required_len, MixedSequence};
use crate::model::{backward, EncoderParams, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_steps(10_000)
    }
}

impl TrainConfig {
    /// Desk defaults with a 10% warmup.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            batch_size: 32,
            peak_lr: 5e-4,
            warmup_steps: steps / 10,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(Error::Config("peak_lr must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate of update `step` (0-based): linear warmup, then linear decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let rest = (self.steps - self.warmup_steps).max(1) as f64;
            self.peak_lr * (self.steps - step) as f64 / rest
        }
    }
}

/// SplitMix64 finalizer over a combination of inputs.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Whether a sentence belongs to the 5% held-out split.
pub fn is_held_out(sentence: &str) -> bool {
    let digest = Sha256::digest(sentence.trim().as_bytes());
    let v = u64::from_le_bytes(digest[..8].try_into().unwrap());
    v % 100 < 5
}

/// Normalizes, looks up and encodes one sentence, dropping trailing words
/// that do not fit in `max_len`.
pub fn prepare_sentence(
    text: &str,
    lexicon: &Lexicon,
    table: &MergeTable,
    max_len: usize,
) -> Result<MixedSequence> {
    let norm = normalize_text(text)?;
    let mut prons = g2p(&norm, lexicon, table.phoneme_vocab());
    while prons.len() > 1 && required_len(&prons) > max_len {
        prons.pop();
    }
    build_mixed_sequence(&prons, table, max_len)
}

#[derive(Clone, Debug, Default)]
pub struct PreparedCorpus {
    pub train: Vec<MixedSequence>,
    pub held_out: Vec<MixedSequence>,
    /// Lines with no usable word.
    pub skipped: usize,
}

impl PreparedCorpus {
    pub fn from_lines<'a, I>(lines: I, lexicon: &Lexicon, table: &MergeTable, max_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = Self::default();
        for line in lines {
            match prepare_sentence(line, lexicon, table, max_len) {
                Ok(seq) if is_held_out(line) => out.held_out.push(seq),
                Ok(seq) => out.train.push(seq),
                Err(Error::EmptySentence | Error::SequenceTooLong { .. }) => out.skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if out.train.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_phoneme: f64,
    pub loss_sup: f64,
    pub lr: f64,
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("step,loss_total,loss_phoneme,loss_sup,lr\n");
    for r in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.loss_total, r.loss_phoneme, r.loss_sup, r.lr
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub curve: Vec<LossRecord>,
    pub reports: Vec<(usize, MlmReport)>,
}

struct Adam {
    m: EncoderParams,
    v: EncoderParams,
    t: i32,
}

fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

impl Adam {
    fn new(params: &EncoderParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((name, mut p), (_, g)), ((_, mut m), (_, mut v))) in
            params.tensors_mut().into_iter().zip(g).zip(m.into_iter().zip(v))
        {
            let wd = if decays(&name) { cfg.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let step = (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
                    *p -= lr * (step + wd * *p);
                });
        }
    }
}

/// Runs `cfg.steps` AdamW updates on mini-batches of freshly masked sequences.
///
/// Masks and dropout draws are keyed by `(seed, step, slot)`, so the run is
/// reproducible bit for bit.
pub fn train(
    corpus: &PreparedCorpus,
    table: &MergeTable,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    policy: &MaskPolicy,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    policy.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut params = EncoderParams::init(
        model_cfg,
        table.phoneme_vocab().len(),
        table.len(),
        derive_seed(train_cfg.seed, u64::MAX, 0),
    );
    let mut adam = Adam::new(&params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, u64::MAX, 1));
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(train_cfg.steps);
    let mut reports = Vec::new();

    for step in 0..train_cfg.steps {
        let mut grads = params.zeros_like();
        let (mut lt, mut lp, mut ls) = (0.0, 0.0, 0.0);
        for slot in 0..train_cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let seq = &corpus.train[order[cursor]];
            cursor += 1;
            let key = derive_seed(train_cfg.seed, step as u64, slot as u64);
            let ex = select_masks(seq, table, &policy.clone().with_seed(key));
            let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(key, 1, 1));
            let (out, g) = backward(&ex, &params, model_cfg, Some(&mut drop_rng)).map_err(|e| {
                if e.is_numerical() {
                    Error::Diverged { step }
                } else {
                    e
                }
            })?;
            grads.add_scaled(&g, 1.0);
            lt += out.loss_total;
            lp += out.loss_phoneme;
            ls += out.loss_sup;
        }
        let n = train_cfg.batch_size as f64;
        grads.scale(1.0 / n);
        let (lt, lp, ls) = (lt / n, lp / n, ls / n);
        if !lt.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged { step });
        }
        let lr = train_cfg.lr_at(step);
        adam.update(&mut params, &grads, lr, train_cfg);
        if !params.all_finite() {
            return Err(Error::Diverged { step });
        }
        curve.push(LossRecord {
            step,
            loss_total: lt,
            loss_phoneme: lp,
            loss_sup: ls,
            lr,
        });
        if train_cfg.eval_every > 0 && (step + 1) % train_cfg.eval_every == 0 && !corpus.held_out.is_empty() {
            let report = eval_mlm(&params, model_cfg, &corpus.held_out, table, policy)?;
            reports.push((step + 1, report));
        }
    }
    Ok(TrainOutcome {
        params,
        curve,
        reports,
    })
}
