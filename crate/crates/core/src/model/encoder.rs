//! FFT-block encoder: multi-head self-attention and a two-layer 1-D
//! convolutional feed-forward, each followed by residual + post layer norm.
//! The backward pass is written out by hand, layer by layer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{EncoderParams, LayerParams};
use crate::error::{Error, Result};
use crate::masking::MaskedExample;
use crate::mixing::{embed, MixedSequence};
use crate::vocab::{PhonemeId, SupId};

pub const LN_EPS: f64 = 1e-5;

/// RNG driving dropout. Passing one turns training mode on.
pub type DropoutRng = ChaCha8Rng;

/// The two aligned id streams fed to the encoder.
#[derive(Copy, Clone, Debug)]
pub struct ModelInput<'a> {
    pub phoneme_ids: &'a [PhonemeId],
    pub sup_ids: &'a [SupId],
}

impl<'a> From<&'a MixedSequence> for ModelInput<'a> {
    fn from(s: &'a MixedSequence) -> Self {
        Self {
            phoneme_ids: &s.phoneme_ids,
            sup_ids: &s.sup_ids_upsampled,
        }
    }
}

impl<'a> From<&'a MaskedExample> for ModelInput<'a> {
    fn from(e: &'a MaskedExample) -> Self {
        Self {
            phoneme_ids: &e.input_phoneme_ids,
            sup_ids: &e.input_sup_ids_upsampled,
        }
    }
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    attn_mask: Option<Vec<Array2<f64>>>,
    z: Array2<f64>,
    ln1: LnCache,
    u1: Array2<f64>,
    c1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    u2: Array2<f64>,
    mask2: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Activations kept from the forward pass for [`backward_layers`].
pub struct ForwardCache {
    pub(crate) layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Attention probabilities (before dropout) of one head.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].attn[head]
    }

    /// Inputs of the feed-forward ReLU, `(T, ff_filter)`.
    pub fn relu_inputs(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].c1
    }
}

fn add_row(m: &mut Array2<f64>, b: &Array1<f64>) {
    m.rows_mut().into_iter().for_each(|mut r| r += b);
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * gain;
    add_row(&mut y, bias);
    (y, LnCache { xhat, inv_std })
}

/// Returns the input gradient and accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let h = dy.ncols() as f64;
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for t in 0..dy.nrows() {
        let dxh = dxhat.row(t);
        let xh = cache.xhat.row(t);
        let sum = dxh.sum();
        let dot = dxh.dot(&xh);
        let inv = cache.inv_std[t];
        Zip::from(dx.row_mut(t))
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &g, &x| *o = inv / h * (h * g - sum - x * dot));
    }
    dx
}

/// `(T, k * C)` matrix of zero-padded "same" convolution windows.
fn im2col(x: &Array2<f64>, k: usize) -> Array2<f64> {
    if k == 1 {
        return x.clone();
    }
    let (t_len, c) = x.dim();
    let pad = k / 2;
    let mut u = Array2::zeros((t_len, k * c));
    for t in 0..t_len {
        for j in 0..k {
            let src = t as isize + j as isize - pad as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            u.slice_mut(s![t, j * c..(j + 1) * c])
                .assign(&x.row(src as usize));
        }
    }
    u
}

/// Adjoint of [`im2col`].
fn col2im(du: &Array2<f64>, k: usize, c: usize) -> Array2<f64> {
    if k == 1 {
        return du.clone();
    }
    let t_len = du.nrows();
    let pad = k / 2;
    let mut dx = Array2::zeros((t_len, c));
    for t in 0..t_len {
        for j in 0..k {
            let dst = t as isize + j as isize - pad as isize;
            if dst < 0 || dst >= t_len as isize {
                continue;
            }
            let mut row = dx.row_mut(dst as usize);
            row += &du.slice(s![t, j * c..(j + 1) * c]);
        }
    }
    dx
}

fn dropout_mask(rng: &mut DropoutRng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    add_row(&mut y, b);
    y
}

fn layer_forward(
    x: Array2<f64>,
    p: &LayerParams,
    cfg: &ModelConfig,
    mut rng: Option<&mut DropoutRng>,
) -> (Array2<f64>, LayerCache) {
    let t_len = x.nrows();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let drop = cfg.dropout > 0.0 && rng.is_some();

    let q = affine(&x, &p.wq, &p.bq);
    let k = affine(&x, &p.wk, &p.bk);
    let v = affine(&x, &p.wv, &p.bv);
    let mut z = Array2::zeros((t_len, cfg.hidden));
    let mut attn = Vec::with_capacity(cfg.heads);
    let mut attn_mask = drop.then(Vec::new);
    for h in 0..cfg.heads {
        let cols = s![.., h * d..(h + 1) * d];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        let zh = match (&mut attn_mask, rng.as_deref_mut()) {
            (Some(masks), Some(r)) => {
                let m = dropout_mask(r, (t_len, t_len), cfg.dropout);
                let zh = (&a * &m).dot(&v.slice(cols));
                masks.push(m);
                zh
            }
            _ => a.dot(&v.slice(cols)),
        };
        z.slice_mut(cols).assign(&zh);
        attn.push(a);
    }
    let s1 = &x + &affine(&z, &p.wo, &p.bo);
    let (y1, ln1) = layer_norm(&s1, &p.ln1_gain, &p.ln1_bias);

    let u1 = im2col(&y1, cfg.ff_kernels.0);
    let c1 = affine(&u1, &p.conv1_w, &p.conv1_b);
    let mut h1 = c1.mapv(|v| v.max(0.0));
    let mask1 = match rng.as_deref_mut() {
        Some(r) if drop => {
            let m = dropout_mask(r, h1.dim(), cfg.dropout);
            h1 *= &m;
            Some(m)
        }
        _ => None,
    };
    let u2 = im2col(&h1, cfg.ff_kernels.1);
    let mut c2 = affine(&u2, &p.conv2_w, &p.conv2_b);
    let mask2 = match rng.as_deref_mut() {
        Some(r) if drop => {
            let m = dropout_mask(r, c2.dim(), cfg.dropout);
            c2 *= &m;
            Some(m)
        }
        _ => None,
    };
    let s2 = &y1 + &c2;
    let (y2, ln2) = layer_norm(&s2, &p.ln2_gain, &p.ln2_bias);
    let cache = LayerCache {
        x,
        q,
        k,
        v,
        attn,
        attn_mask,
        z,
        ln1,
        u1,
        c1,
        mask1,
        u2,
        mask2,
        ln2,
    };
    (y2, cache)
}

/// Accumulates parameter gradients into `g` and returns the input gradient.
fn layer_backward(
    dy: &Array2<f64>,
    c: &LayerCache,
    p: &LayerParams,
    cfg: &ModelConfig,
    g: &mut LayerParams,
) -> Array2<f64> {
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let (k1, k2) = cfg.ff_kernels;

    let ds2 = layer_norm_backward(dy, &c.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    let mut dy1 = ds2.clone();
    let mut dc2 = ds2;
    if let Some(m) = &c.mask2 {
        dc2 *= m;
    }
    g.conv2_w += &c.u2.t().dot(&dc2);
    g.conv2_b += &dc2.sum_axis(Axis(0));
    let mut dh1 = col2im(&dc2.dot(&p.conv2_w.t()), k2, cfg.ff_filter);
    if let Some(m) = &c.mask1 {
        dh1 *= m;
    }
    Zip::from(&mut dh1).and(&c.c1).for_each(|g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    let dc1 = dh1;
    g.conv1_w += &c.u1.t().dot(&dc1);
    g.conv1_b += &dc1.sum_axis(Axis(0));
    dy1 += &col2im(&dc1.dot(&p.conv1_w.t()), k1, cfg.hidden);

    let ds1 = layer_norm_backward(&dy1, &c.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    let mut dx = ds1.clone();
    let d_o = ds1;
    g.wo += &c.z.t().dot(&d_o);
    g.bo += &d_o.sum_axis(Axis(0));
    let dz = d_o.dot(&p.wo.t());

    let t_len = dy.nrows();
    let mut dq = Array2::zeros((t_len, cfg.hidden));
    let mut dk = Array2::zeros((t_len, cfg.hidden));
    let mut dv = Array2::zeros((t_len, cfg.hidden));
    for h in 0..cfg.heads {
        let cols = s![.., h * d..(h + 1) * d];
        let a = &c.attn[h];
        let dzh = dz.slice(cols);
        let mut da = dzh.dot(&c.v.slice(cols).t());
        match &c.attn_mask {
            Some(masks) => {
                let ad = a * &masks[h];
                dv.slice_mut(cols).assign(&ad.t().dot(&dzh));
                da *= &masks[h];
            }
            None => dv.slice_mut(cols).assign(&a.t().dot(&dzh)),
        }
        // softmax: ds = a * (da - <da, a>_row)
        let row_dot = (&da * a).sum_axis(Axis(1));
        let mut dscore = da;
        Zip::from(dscore.rows_mut())
            .and(a.rows())
            .and(&row_dot)
            .for_each(|mut ds, ar, &rd| {
                Zip::from(&mut ds).and(&ar).for_each(|x, &av| *x = av * (*x - rd) * scale);
            });
        dq.slice_mut(cols).assign(&dscore.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscore.t().dot(&c.q.slice(cols)));
    }
    for (dproj, w, gw, gb) in [
        (&dq, &p.wq, &mut g.wq, &mut g.bq),
        (&dk, &p.wk, &mut g.wk, &mut g.bk),
        (&dv, &p.wv, &mut g.wv, &mut g.bv),
    ] {
        *gw += &c.x.t().dot(dproj);
        *gb += &dproj.sum_axis(Axis(0));
        dx += &dproj.dot(&w.t());
    }
    dx
}

fn check_finite(m: &Array2<f64>, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { layer })
    }
}

/// Forward pass that keeps every activation needed by [`backward_layers`].
pub fn forward_with_cache(
    input: ModelInput<'_>,
    params: &EncoderParams,
    cfg: &ModelConfig,
    mut rng: Option<&mut DropoutRng>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let t_len = input.phoneme_ids.len();
    if t_len > cfg.max_len {
        return Err(Error::SequenceTooLong {
            len: t_len,
            max: cfg.max_len,
        });
    }
    let mut x = embed(input.phoneme_ids, input.sup_ids, &params.embeddings)?;
    check_finite(&x, 0)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, p) in params.layers.iter().enumerate() {
        let (y, cache) = layer_forward(x, p, cfg, rng.as_deref_mut());
        check_finite(&y, l)?;
        layers.push(cache);
        x = y;
    }
    Ok((x, ForwardCache { layers }))
}

/// `T x hidden` encoder output. Dropout is applied only when `rng` is given.
pub fn encoder_forward(
    input: ModelInput<'_>,
    params: &EncoderParams,
    cfg: &ModelConfig,
    rng: Option<&mut DropoutRng>,
) -> Result<Array2<f64>> {
    forward_with_cache(input, params, cfg, rng).map(|(h, _)| h)
}

/// Back-propagates `d_hidden` through every block and into the embedding tables.
pub fn backward_layers(
    d_hidden: Array2<f64>,
    input: ModelInput<'_>,
    cache: &ForwardCache,
    params: &EncoderParams,
    cfg: &ModelConfig,
    grads: &mut EncoderParams,
) {
    let mut dx = d_hidden;
    for l in (0..params.layers.len()).rev() {
        dx = layer_backward(&dx, &cache.layers[l], &params.layers[l], cfg, &mut grads.layers[l]);
    }
    let emb = &mut grads.embeddings;
    for (t, row) in dx.rows().into_iter().enumerate() {
        let mut r = emb.phoneme.row_mut(input.phoneme_ids[t].index());
        r += &row;
        let mut r = emb.sup.row_mut(input.sup_ids[t].index());
        r += &row;
        let mut r = emb.position.row_mut(t);
        r += &row;
    }
}

/// Mean over the selected rows of `m`.
pub(crate) fn mean_rows(m: &ArrayView2<'_, f64>, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::zeros(m.ncols());
    for &r in rows {
        acc += &m.row(r);
    }
    acc / rows.len() as f64
}
