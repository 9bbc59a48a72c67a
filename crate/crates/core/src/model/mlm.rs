//! Phoneme and sup-phoneme prediction heads and the summed cross-entropy.
//!
//! The phoneme head scores every masked position. The sup head scores each
//! masked sup token from the mean of the hidden rows of its masked positions.

use ndarray::{Array1, Array2, Axis};

use super::config::ModelConfig;
use super::encoder::{backward_layers, forward_with_cache, mean_rows, DropoutRng, ModelInput};
use super::params::EncoderParams;
use crate::error::Result;
use crate::masking::MaskedExample;

#[derive(Clone, Debug, PartialEq)]
pub struct MlmOutput {
    /// One row per masked position.
    pub phoneme_logits: Array2<f64>,
    /// One row per masked sup token.
    pub sup_logits: Array2<f64>,
    pub phoneme_targets: Vec<usize>,
    pub sup_targets: Vec<usize>,
    pub loss_phoneme: f64,
    pub loss_sup: f64,
    pub loss_total: f64,
    positions: Vec<usize>,
    pools: Vec<Vec<usize>>,
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl MlmOutput {
    pub fn phoneme_correct(&self) -> usize {
        self.phoneme_logits
            .rows()
            .into_iter()
            .zip(&self.phoneme_targets)
            .filter(|(r, &t)| argmax(r.view()) == t)
            .count()
    }

    pub fn sup_correct(&self) -> usize {
        self.sup_logits
            .rows()
            .into_iter()
            .zip(&self.sup_targets)
            .filter(|(r, &t)| argmax(r.view()) == t)
            .count()
    }
}

/// Row-wise log-softmax.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Mean negative log-likelihood of `targets`; zero when there are no rows.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let lp = log_softmax(logits);
    -targets
        .iter()
        .enumerate()
        .map(|(i, &t)| lp[[i, t]])
        .sum::<f64>()
        / targets.len() as f64
}

/// Gradient of [`cross_entropy`] w.r.t. the logits.
fn cross_entropy_grad(logits: &Array2<f64>, targets: &[usize]) -> Array2<f64> {
    let n = targets.len() as f64;
    let mut g = log_softmax(logits).mapv(f64::exp);
    for (i, &t) in targets.iter().enumerate() {
        g[[i, t]] -= 1.0;
    }
    g / n
}

/// Positions pooled for each masked sup token.
fn sup_pools(ex: &MaskedExample) -> Vec<(usize, Vec<usize>)> {
    ex.sup_spans
        .iter()
        .enumerate()
        .filter(|(j, _)| ex.sup_masked[*j])
        .map(|(j, span)| {
            let masked: Vec<usize> = span.positions().filter(|&t| ex.pos_masked[t]).collect();
            let pool = if masked.is_empty() {
                span.positions().collect()
            } else {
                masked
            };
            (j, pool)
        })
        .collect()
}

fn pooled_matrix(hidden: &Array2<f64>, pools: &[Vec<usize>]) -> Array2<f64> {
    let mut m = Array2::zeros((pools.len(), hidden.ncols()));
    for (i, pool) in pools.iter().enumerate() {
        m.row_mut(i).assign(&mean_rows(&hidden.view(), pool));
    }
    m
}

pub fn mlm_heads(hidden: &Array2<f64>, ex: &MaskedExample, params: &EncoderParams) -> MlmOutput {
    let positions: Vec<usize> = (0..ex.len()).filter(|&t| ex.pos_masked[t]).collect();
    let phoneme_targets: Vec<usize> = positions
        .iter()
        .map(|&t| ex.target_phoneme_ids[t].index())
        .collect();
    let selected = hidden.select(Axis(0), &positions);
    let mut phoneme_logits = selected.dot(&params.phoneme_head_w);
    phoneme_logits
        .rows_mut()
        .into_iter()
        .for_each(|mut r| r += &params.phoneme_head_b);

    let (tokens, pools): (Vec<usize>, Vec<Vec<usize>>) = sup_pools(ex).into_iter().unzip();
    let sup_targets: Vec<usize> = tokens.iter().map(|&j| ex.target_sup_ids[j].index()).collect();
    let pooled = pooled_matrix(hidden, &pools);
    let mut sup_logits = pooled.dot(&params.sup_head_w);
    sup_logits
        .rows_mut()
        .into_iter()
        .for_each(|mut r| r += &params.sup_head_b);

    let loss_phoneme = cross_entropy(&phoneme_logits, &phoneme_targets);
    let loss_sup = cross_entropy(&sup_logits, &sup_targets);
    MlmOutput {
        phoneme_logits,
        sup_logits,
        phoneme_targets,
        sup_targets,
        loss_phoneme,
        loss_sup,
        loss_total: loss_phoneme + loss_sup,
        positions,
        pools,
    }
}

/// Head gradients into `grads`; returns the gradient w.r.t. `hidden`.
fn heads_backward(
    hidden: &Array2<f64>,
    out: &MlmOutput,
    params: &EncoderParams,
    grads: &mut EncoderParams,
) -> Array2<f64> {
    let mut dh = Array2::zeros(hidden.raw_dim());
    if !out.positions.is_empty() {
        let dlog = cross_entropy_grad(&out.phoneme_logits, &out.phoneme_targets);
        let selected = hidden.select(Axis(0), &out.positions);
        grads.phoneme_head_w += &selected.t().dot(&dlog);
        grads.phoneme_head_b += &dlog.sum_axis(Axis(0));
        let dsel = dlog.dot(&params.phoneme_head_w.t());
        for (i, &t) in out.positions.iter().enumerate() {
            let mut r = dh.row_mut(t);
            r += &dsel.row(i);
        }
    }
    if !out.pools.is_empty() {
        let dlog = cross_entropy_grad(&out.sup_logits, &out.sup_targets);
        let pooled = pooled_matrix(hidden, &out.pools);
        grads.sup_head_w += &pooled.t().dot(&dlog);
        grads.sup_head_b += &dlog.sum_axis(Axis(0));
        let dpool = dlog.dot(&params.sup_head_w.t());
        for (i, pool) in out.pools.iter().enumerate() {
            let share: Array1<f64> = &dpool.row(i) / pool.len() as f64;
            for &t in pool {
                let mut r = dh.row_mut(t);
                r += &share;
            }
        }
    }
    dh
}

/// Forward pass plus exact gradients of `loss_total` for every parameter.
pub fn backward(
    ex: &MaskedExample,
    params: &EncoderParams,
    cfg: &ModelConfig,
    rng: Option<&mut DropoutRng>,
) -> Result<(MlmOutput, EncoderParams)> {
    let input = ModelInput::from(ex);
    let (hidden, cache) = forward_with_cache(input, params, cfg, rng)?;
    let out = mlm_heads(&hidden, ex, params);
    let mut grads = EncoderParams::zeros(cfg, params.phoneme_vocab(), params.sup_vocab());
    if out.positions.is_empty() && out.pools.is_empty() {
        return Ok((out, grads));
    }
    let dh = heads_backward(&hidden, &out, params, &mut grads);
    backward_layers(dh, input, &cache, params, cfg, &mut grads);
    Ok((out, grads))
}

/// Inference-mode loss and logits for one example.
pub fn evaluate_example(
    ex: &MaskedExample,
    params: &EncoderParams,
    cfg: &ModelConfig,
) -> Result<MlmOutput> {
    let (hidden, _) = forward_with_cache(ModelInput::from(ex), params, cfg, None)?;
    Ok(mlm_heads(&hidden, ex, params))
}
