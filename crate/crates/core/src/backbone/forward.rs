use crate::error::{Result, SmpError};
use crate::numerics::{DenseMatrix, DenseVector};

use super::{FrozenBackbone, MergedAdapterSet};

pub(super) const LN_EPS: f64 = 1e-5;
pub(super) const GELU_C: f64 = 0.044715;

#[inline]
pub(super) fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub(super) fn gelu_prime(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// Per-row layer norm: keeps the normalized activations and per-row inverse
/// std so the backward pass can be exact.
#[derive(Debug, Clone)]
pub(super) struct LayerNormTrace {
    pub out: DenseMatrix,
    pub xhat: DenseMatrix,
    pub rstd: Vec<f64>,
}

pub(super) fn layer_norm(
    x: &DenseMatrix,
    scale: &DenseVector,
    shift: &DenseVector,
) -> LayerNormTrace {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut xhat = DenseMatrix::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(inv);
        for c in 0..cols {
            let h = (row[c] - mean) * inv;
            xhat.set(r, c, h);
            out.set(r, c, scale[c] * h + shift[c]);
        }
    }
    LayerNormTrace { out, xhat, rstd }
}

/// Row-wise softmax with max subtraction.
pub(super) fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub(super) struct LayerTrace {
    pub ln1: LayerNormTrace,
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    pub probs: DenseMatrix,
    pub ctx: DenseMatrix,
    pub ln2: LayerNormTrace,
    pub ffn_pre: DenseMatrix,
    pub ffn_act: DenseMatrix,
    pub eff_k: DenseMatrix,
    pub eff_v: DenseMatrix,
}

/// Everything the backward pass needs, cached per sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(super) patches: DenseMatrix,
    pub(super) layers: Vec<LayerTrace>,
    pub embedding: DenseVector,
}

/// Patch embed, prepend class token, run L pre-norm transformer layers with
/// adapted key/value projections, return the class-token output.
pub fn forward(
    backbone: &FrozenBackbone,
    deltas: &MergedAdapterSet,
    sample: &[f64],
) -> Result<ForwardTrace> {
    let cfg = &backbone.config;
    let d = cfg.embed_dim;
    let n = cfg.num_patches;
    if sample.len() != n * backbone.patch_dim {
        return Err(SmpError::Shape(format!(
            "sample length {} != {} patches x {} dims",
            sample.len(),
            n,
            backbone.patch_dim
        )));
    }
    if deltas.num_layers() != cfg.num_layers {
        return Err(SmpError::Shape(format!(
            "adapter set has {} layers, backbone has {}",
            deltas.num_layers(),
            cfg.num_layers
        )));
    }

    let patches = DenseMatrix::from_vec(n, backbone.patch_dim, sample.to_vec())?;
    let embedded = patches.matmul(&backbone.patch_embed)?;
    let mut h = DenseMatrix::zeros(n + 1, d);
    h.row_mut(0).copy_from_slice(&backbone.class_token);
    for i in 0..n {
        h.row_mut(i + 1).copy_from_slice(embedded.row(i));
    }

    let scale = 1.0 / (cfg.key_dim as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (lw, ld) in backbone.layers.iter().zip(&deltas.layers) {
        let h_in = h.clone();
        let ln1 = layer_norm(&h_in, &lw.ln1_scale, &lw.ln1_shift);
        let eff_k = lw.w_k0.add(&ld.key)?;
        let eff_v = lw.w_v0.add(&ld.value)?;
        let q = ln1.out.matmul(&lw.w_q)?;
        let k = ln1.out.matmul(&eff_k)?;
        let v = ln1.out.matmul(&eff_v)?;
        let scores = q.matmul(&k.transpose())?.scale(scale);
        let probs = softmax_rows(&scores);
        let ctx = probs.matmul(&v)?;
        let attn_out = ctx.matmul(&lw.w_out)?;
        let h_mid = h_in.add(&attn_out)?;
        let ln2 = layer_norm(&h_mid, &lw.ln2_scale, &lw.ln2_shift);
        let ffn_pre = ln2.out.matmul(&lw.ffn1)?;
        let mut ffn_act = ffn_pre.clone();
        for vv in ffn_act.data_mut() {
            *vv = gelu(*vv);
        }
        let ffn_out = ffn_act.matmul(&lw.ffn2)?;
        h = h_mid.add(&ffn_out)?;
        layers.push(LayerTrace {
            ln1,
            q,
            k,
            v,
            probs,
            ctx,
            ln2,
            ffn_pre,
            ffn_act,
            eff_k,
            eff_v,
        });
    }

    let embedding = h.row(0).to_vec();
    if !embedding.iter().all(|v| v.is_finite()) {
        return Err(SmpError::Numeric("non-finite activations in forward pass".into()));
    }
    Ok(ForwardTrace { patches, layers, embedding })
}
