use crate::error::Result;
use crate::numerics::{DenseMatrix, DenseVector};

use super::forward::{gelu_prime, ForwardTrace, LayerNormTrace};
use super::{AdapterSet, FrozenBackbone, LayerAdapters, AdapterPair};

/// Gradients for one transformer layer. `w_k` and `w_v` are gradients with
/// respect to the *effective* projections, which equal the gradients with
/// respect to the update blocks Delta W.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
    pub w_out: DenseMatrix,
    pub ffn1: DenseMatrix,
    pub ffn2: DenseMatrix,
    pub ln1_scale: DenseVector,
    pub ln1_shift: DenseVector,
    pub ln2_scale: DenseVector,
    pub ln2_shift: DenseVector,
}

#[derive(Debug, Clone)]
pub struct BackboneGrads {
    pub patch_embed: DenseMatrix,
    pub class_token: DenseVector,
    pub layers: Vec<LayerGrads>,
}

fn layer_norm_backward(
    trace: &LayerNormTrace,
    scale: &DenseVector,
    d_out: &DenseMatrix,
) -> (DenseMatrix, DenseVector, DenseVector) {
    let (rows, cols) = (d_out.rows(), d_out.cols());
    let mut dx = DenseMatrix::zeros(rows, cols);
    let mut d_scale = vec![0.0; cols];
    let mut d_shift = vec![0.0; cols];
    for r in 0..rows {
        let dy = d_out.row(r);
        let xhat = trace.xhat.row(r);
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..cols {
            let dxh = dy[c] * scale[c];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[c];
            d_scale[c] += dy[c] * xhat[c];
            d_shift[c] += dy[c];
        }
        mean_dxhat /= cols as f64;
        mean_dxhat_xhat /= cols as f64;
        let inv = trace.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..cols {
            let dxh = dy[c] * scale[c];
            out[c] = inv * (dxh - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
    }
    (dx, d_scale, d_shift)
}

fn softmax_rows_backward(probs: &DenseMatrix, d_probs: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = d_probs.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        let o = out.row_mut(r);
        for c in 0..p.len() {
            o[c] = p[c] * (dp[c] - dot);
        }
    }
    out
}

/// Exact reverse pass of [`super::forward`]: gradients of
/// (upstream . embedding) with respect to every weight, including the
/// effective key/value projections used by adapter training and the Fisher
/// pass.
pub fn backward(
    backbone: &FrozenBackbone,
    trace: &ForwardTrace,
    upstream: &[f64],
) -> Result<BackboneGrads> {
    let cfg = &backbone.config;
    let d = cfg.embed_dim;
    let rows = cfg.num_patches + 1;
    let scale = 1.0 / (cfg.key_dim as f64).sqrt();

    let mut d_h = DenseMatrix::zeros(rows, d);
    d_h.row_mut(0).copy_from_slice(upstream);

    let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(cfg.num_layers);
    for (lw, lt) in backbone.layers.iter().zip(&trace.layers).rev() {
        // FFN branch: h_out = h_mid + gelu(ln2 . ffn1) . ffn2
        let d_ffn2 = lt.ffn_act.transpose().matmul(&d_h)?;
        let d_ffn_act = d_h.matmul(&lw.ffn2.transpose())?;
        let mut d_ffn_pre = d_ffn_act;
        for (g, pre) in d_ffn_pre.data_mut().iter_mut().zip(lt.ffn_pre.data()) {
            *g *= gelu_prime(*pre);
        }
        let d_ffn1 = lt.ln2.out.transpose().matmul(&d_ffn_pre)?;
        let d_ln2_out = d_ffn_pre.matmul(&lw.ffn1.transpose())?;
        let (d_h_mid_ln, ln2_scale_g, ln2_shift_g) =
            layer_norm_backward(&lt.ln2, &lw.ln2_scale, &d_ln2_out);
        let d_h_mid = d_h.add(&d_h_mid_ln)?;

        // Attention branch: h_mid = h_in + (probs . v) . w_out
        let d_w_out = lt.ctx.transpose().matmul(&d_h_mid)?;
        let d_ctx = d_h_mid.matmul(&lw.w_out.transpose())?;
        let d_probs = d_ctx.matmul(&lt.v.transpose())?;
        let d_v = lt.probs.transpose().matmul(&d_ctx)?;
        let d_scores = softmax_rows_backward(&lt.probs, &d_probs).scale(scale);
        let d_q = d_scores.matmul(&lt.k)?;
        let d_k = d_scores.transpose().matmul(&lt.q)?;
        let d_w_q = lt.ln1.out.transpose().matmul(&d_q)?;
        let d_w_k = lt.ln1.out.transpose().matmul(&d_k)?;
        let d_w_v = lt.ln1.out.transpose().matmul(&d_v)?;
        let mut d_ln1_out = d_q.matmul(&lw.w_q.transpose())?;
        d_ln1_out.add_assign(&d_k.matmul(&lt.eff_k.transpose())?)?;
        d_ln1_out.add_assign(&d_v.matmul(&lt.eff_v.transpose())?)?;
        let (d_h_in_ln, ln1_scale_g, ln1_shift_g) =
            layer_norm_backward(&lt.ln1, &lw.ln1_scale, &d_ln1_out);
        d_h = d_h_mid.add(&d_h_in_ln)?;

        layer_grads.push(LayerGrads {
            w_q: d_w_q,
            w_k: d_w_k,
            w_v: d_w_v,
            w_out: d_w_out,
            ffn1: d_ffn1,
            ffn2: d_ffn2,
            ln1_scale: ln1_scale_g,
            ln1_shift: ln1_shift_g,
            ln2_scale: ln2_scale_g,
            ln2_shift: ln2_shift_g,
        });
    }
    layer_grads.reverse();

    let class_token = d_h.row(0).to_vec();
    let mut d_embedded = DenseMatrix::zeros(cfg.num_patches, d);
    for i in 0..cfg.num_patches {
        d_embedded.row_mut(i).copy_from_slice(d_h.row(i + 1));
    }
    let patch_embed = trace.patches.transpose().matmul(&d_embedded)?;

    Ok(BackboneGrads { patch_embed, class_token, layers: layer_grads })
}

/// Chain rule from the effective-projection gradients down to the low-rank
/// factors: dA = B^T dW, dB = dW A^T. Returned in the AdapterSet layout.
pub fn adapter_grads(adapters: &AdapterSet, grads: &BackboneGrads) -> Result<AdapterSet> {
    let mut layers = Vec::with_capacity(adapters.layers.len());
    for (la, lg) in adapters.layers.iter().zip(&grads.layers) {
        let key = AdapterPair {
            a: la.key.b.transpose().matmul(&lg.w_k)?,
            b: lg.w_k.matmul(&la.key.a.transpose())?,
        };
        let value = AdapterPair {
            a: la.value.b.transpose().matmul(&lg.w_v)?,
            b: lg.w_v.matmul(&la.value.a.transpose())?,
        };
        layers.push(LayerAdapters { key, value });
    }
    Ok(AdapterSet { layers })
}

impl BackboneGrads {
    pub fn add_assign(&mut self, other: &BackboneGrads) -> Result<()> {
        self.patch_embed.add_assign(&other.patch_embed)?;
        for (a, b) in self.class_token.iter_mut().zip(&other.class_token) {
            *a += b;
        }
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w_q.add_assign(&o.w_q)?;
            l.w_k.add_assign(&o.w_k)?;
            l.w_v.add_assign(&o.w_v)?;
            l.w_out.add_assign(&o.w_out)?;
            l.ffn1.add_assign(&o.ffn1)?;
            l.ffn2.add_assign(&o.ffn2)?;
            for (a, b) in l.ln1_scale.iter_mut().zip(&o.ln1_scale) {
                *a += b;
            }
            for (a, b) in l.ln1_shift.iter_mut().zip(&o.ln1_shift) {
                *a += b;
            }
            for (a, b) in l.ln2_scale.iter_mut().zip(&o.ln2_scale) {
                *a += b;
            }
            for (a, b) in l.ln2_shift.iter_mut().zip(&o.ln2_shift) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in self.patch_embed.data_mut() {
            *v *= s;
        }
        for v in self.class_token.iter_mut() {
            *v *= s;
        }
        for l in self.layers.iter_mut() {
            for m in [&mut l.w_q, &mut l.w_k, &mut l.w_v, &mut l.w_out, &mut l.ffn1, &mut l.ffn2]
            {
                for v in m.data_mut() {
                    *v *= s;
                }
            }
            for vec in [&mut l.ln1_scale, &mut l.ln1_shift, &mut l.ln2_scale, &mut l.ln2_shift] {
                for v in vec.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}
