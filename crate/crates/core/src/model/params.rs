use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::mixing::EmbeddingTables;

/// Weights of one FFT block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// `(k1 * hidden, ff_filter)`, row `j * hidden + c` is tap `j` of input channel `c`.
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    /// `(k2 * ff_filter, hidden)`.
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let f = cfg.ff_filter;
        let (k1, k2) = cfg.ff_kernels;
        Self {
            wq: Array2::zeros((h, h)),
            bq: Array1::zeros(h),
            wk: Array2::zeros((h, h)),
            bk: Array1::zeros(h),
            wv: Array2::zeros((h, h)),
            bv: Array1::zeros(h),
            wo: Array2::zeros((h, h)),
            bo: Array1::zeros(h),
            ln1_gain: Array1::zeros(h),
            ln1_bias: Array1::zeros(h),
            conv1_w: Array2::zeros((k1 * h, f)),
            conv1_b: Array1::zeros(f),
            conv2_w: Array2::zeros((k2 * f, h)),
            conv2_b: Array1::zeros(h),
            ln2_gain: Array1::zeros(h),
            ln2_bias: Array1::zeros(h),
        }
    }

    fn push_views<'a>(&'a self, i: usize, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        let n = |s: &str| format!("layer{i}.{s}");
        out.push((n("attn.q.weight"), self.wq.view().into_dyn()));
        out.push((n("attn.q.bias"), self.bq.view().into_dyn()));
        out.push((n("attn.k.weight"), self.wk.view().into_dyn()));
        out.push((n("attn.k.bias"), self.bk.view().into_dyn()));
        out.push((n("attn.v.weight"), self.wv.view().into_dyn()));
        out.push((n("attn.v.bias"), self.bv.view().into_dyn()));
        out.push((n("attn.o.weight"), self.wo.view().into_dyn()));
        out.push((n("attn.o.bias"), self.bo.view().into_dyn()));
        out.push((n("ln1.gain"), self.ln1_gain.view().into_dyn()));
        out.push((n("ln1.bias"), self.ln1_bias.view().into_dyn()));
        out.push((n("conv1.weight"), self.conv1_w.view().into_dyn()));
        out.push((n("conv1.bias"), self.conv1_b.view().into_dyn()));
        out.push((n("conv2.weight"), self.conv2_w.view().into_dyn()));
        out.push((n("conv2.bias"), self.conv2_b.view().into_dyn()));
        out.push((n("ln2.gain"), self.ln2_gain.view().into_dyn()));
        out.push((n("ln2.bias"), self.ln2_bias.view().into_dyn()));
    }

    fn push_views_mut<'a>(&'a mut self, i: usize, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        let n = |s: &str| format!("layer{i}.{s}");
        out.push((n("attn.q.weight"), self.wq.view_mut().into_dyn()));
        out.push((n("attn.q.bias"), self.bq.view_mut().into_dyn()));
        out.push((n("attn.k.weight"), self.wk.view_mut().into_dyn()));
        out.push((n("attn.k.bias"), self.bk.view_mut().into_dyn()));
        out.push((n("attn.v.weight"), self.wv.view_mut().into_dyn()));
        out.push((n("attn.v.bias"), self.bv.view_mut().into_dyn()));
        out.push((n("attn.o.weight"), self.wo.view_mut().into_dyn()));
        out.push((n("attn.o.bias"), self.bo.view_mut().into_dyn()));
        out.push((n("ln1.gain"), self.ln1_gain.view_mut().into_dyn()));
        out.push((n("ln1.bias"), self.ln1_bias.view_mut().into_dyn()));
        out.push((n("conv1.weight"), self.conv1_w.view_mut().into_dyn()));
        out.push((n("conv1.bias"), self.conv1_b.view_mut().into_dyn()));
        out.push((n("conv2.weight"), self.conv2_w.view_mut().into_dyn()));
        out.push((n("conv2.bias"), self.conv2_b.view_mut().into_dyn()));
        out.push((n("ln2.gain"), self.ln2_gain.view_mut().into_dyn()));
        out.push((n("ln2.bias"), self.ln2_bias.view_mut().into_dyn()));
    }
}

/// Every trainable tensor of the encoder and both MLM heads.
///
/// Gradients use the same type, so `grads.tensors()` lines up with
/// `params.tensors()` name for name.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embeddings: EmbeddingTables,
    pub layers: Vec<LayerParams>,
    pub phoneme_head_w: Array2<f64>,
    pub phoneme_head_b: Array1<f64>,
    pub sup_head_w: Array2<f64>,
    pub sup_head_b: Array1<f64>,
}

pub const INIT_STD: f64 = 0.02;

impl EncoderParams {
    pub fn zeros(cfg: &ModelConfig, phoneme_vocab: usize, sup_vocab: usize) -> Self {
        Self {
            embeddings: EmbeddingTables::zeros(phoneme_vocab, sup_vocab, cfg.max_len, cfg.hidden),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            phoneme_head_w: Array2::zeros((cfg.hidden, phoneme_vocab)),
            phoneme_head_b: Array1::zeros(phoneme_vocab),
            sup_head_w: Array2::zeros((cfg.hidden, sup_vocab)),
            sup_head_b: Array1::zeros(sup_vocab),
        }
    }

    /// Normal(0, 0.02) weights and embeddings, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, phoneme_vocab: usize, sup_vocab: usize, seed: u64) -> Self {
        let mut p = Self::zeros(cfg, phoneme_vocab, sup_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, mut t) in p.tensors_mut() {
            if name.ends_with(".gain") {
                t.fill(1.0);
            } else if !name.ends_with(".bias") {
                t.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn phoneme_vocab(&self) -> usize {
        self.phoneme_head_b.len()
    }

    pub fn sup_vocab(&self) -> usize {
        self.sup_head_b.len()
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("embed.phoneme".to_string(), self.embeddings.phoneme.view().into_dyn()),
            ("embed.sup".to_string(), self.embeddings.sup.view().into_dyn()),
            ("embed.position".to_string(), self.embeddings.position.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            l.push_views(i, &mut out);
        }
        out.push(("head.phoneme.weight".into(), self.phoneme_head_w.view().into_dyn()));
        out.push(("head.phoneme.bias".into(), self.phoneme_head_b.view().into_dyn()));
        out.push(("head.sup.weight".into(), self.sup_head_w.view().into_dyn()));
        out.push(("head.sup.bias".into(), self.sup_head_b.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("embed.phoneme".to_string(), self.embeddings.phoneme.view_mut().into_dyn()),
            ("embed.sup".to_string(), self.embeddings.sup.view_mut().into_dyn()),
            ("embed.position".to_string(), self.embeddings.position.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_views_mut(i, &mut out);
        }
        out.push(("head.phoneme.weight".into(), self.phoneme_head_w.view_mut().into_dyn()));
        out.push(("head.phoneme.bias".into(), self.phoneme_head_b.view_mut().into_dyn()));
        out.push(("head.sup.weight".into(), self.sup_head_w.view_mut().into_dyn()));
        out.push(("head.sup.bias".into(), self.sup_head_b.view_mut().into_dyn()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderParams, alpha: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_mut_with(&b, |x, &y| *x += alpha * y);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Euclidean norm over all tensors.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|x| x * x).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_follows_conventions() {
        let cfg = ModelConfig::tiny();
        let p = EncoderParams::init(&cfg, 20, 30, 1);
        assert!(p.layers[0].ln1_gain.iter().all(|&g| g == 1.0));
        assert!(p.layers[1].conv2_b.iter().all(|&b| b == 0.0));
        let w = &p.layers[0].wq;
        let mean = w.mean().unwrap();
        let std = (w.mapv(|x| (x - mean).powi(2)).mean().unwrap()).sqrt();
        assert!(mean.abs() < 0.01 && (std - INIT_STD).abs() < 0.005);
        assert_eq!(p, EncoderParams::init(&cfg, 20, 30, 1));
        assert_ne!(p, EncoderParams::init(&cfg, 20, 30, 2));
    }

    #[test]
    fn tensor_names_are_unique_and_ordered() {
        let p = EncoderParams::zeros(&ModelConfig::tiny(), 5, 6);
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.len(), 3 + 2 * 16 + 4);
        assert_eq!(names[0], "embed.phoneme");
    }
}
