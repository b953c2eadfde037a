use std::collections::BTreeMap;

use crate::error::{Result, SmpError};
use crate::numerics::{DenseMatrix, SeededRng};

use super::{backward, forward, BackboneConfig, BackboneGrads, FrozenBackbone, LayerWeights, MergedAdapterSet};

const INIT_STD: f64 = 0.02;

pub fn init_backbone(
    config: &BackboneConfig,
    patch_dim: usize,
    rng: &mut SeededRng,
) -> Result<FrozenBackbone> {
    config.validate()?;
    let d = config.embed_dim;
    let f = config.ffn_hidden;
    fn mat(rng: &mut SeededRng, r: usize, c: usize) -> Result<DenseMatrix> {
        DenseMatrix::from_vec(r, c, rng.normal_vec(r * c, INIT_STD))
    }
    let patch_embed = mat(rng, patch_dim, d)?;
    let class_token = rng.normal_vec(d, INIT_STD);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerWeights {
            w_q: mat(rng, d, d)?,
            w_k0: mat(rng, d, d)?,
            w_v0: mat(rng, d, d)?,
            w_out: mat(rng, d, d)?,
            ffn1: mat(rng, d, f)?,
            ffn2: mat(rng, f, d)?,
            ln1_scale: vec![1.0; d],
            ln1_shift: vec![0.0; d],
            ln2_scale: vec![1.0; d],
            ln2_shift: vec![0.0; d],
        });
    }
    Ok(FrozenBackbone { config: config.clone(), patch_dim, patch_embed, class_token, layers })
}

fn apply_grads(backbone: &mut FrozenBackbone, grads: &BackboneGrads, lr: f64) -> Result<()> {
    backbone.patch_embed.step(&grads.patch_embed, lr)?;
    for (w, g) in backbone.class_token.iter_mut().zip(&grads.class_token) {
        *w -= lr * g;
    }
    for (lw, lg) in backbone.layers.iter_mut().zip(&grads.layers) {
        lw.w_q.step(&lg.w_q, lr)?;
        lw.w_k0.step(&lg.w_k, lr)?;
        lw.w_v0.step(&lg.w_v, lr)?;
        lw.w_out.step(&lg.w_out, lr)?;
        lw.ffn1.step(&lg.ffn1, lr)?;
        lw.ffn2.step(&lg.ffn2, lr)?;
        for (w, g) in lw.ln1_scale.iter_mut().zip(&lg.ln1_scale) {
            *w -= lr * g;
        }
        for (w, g) in lw.ln1_shift.iter_mut().zip(&lg.ln1_shift) {
            *w -= lr * g;
        }
        for (w, g) in lw.ln2_scale.iter_mut().zip(&lg.ln2_scale) {
            *w -= lr * g;
        }
        for (w, g) in lw.ln2_shift.iter_mut().zip(&lg.ln2_shift) {
            *w -= lr * g;
        }
    }
    Ok(())
}

fn softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - max);
    let mut d = exps.iter().map(|e| e / sum).collect::<Vec<f64>>();
    d[target] -= 1.0;
    (loss, d)
}

/// Train the surrogate encoder with a plain softmax cross-entropy head on
/// pretext data, discard the head, and freeze all weights. Returns the
/// backbone and the held-out pretext accuracy.
pub fn pretrain_backbone(
    config: &BackboneConfig,
    patch_dim: usize,
    train: &[(Vec<f64>, usize)],
    holdout: &[(Vec<f64>, usize)],
    epochs: usize,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<(FrozenBackbone, f64)> {
    if train.is_empty() {
        return Err(SmpError::Input("empty pretext training data".into()));
    }
    // Remap pretext class ids (which are disjoint from FSCIL ids) to 0..P.
    let mut class_index: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, y) in train.iter().chain(holdout) {
        let next = class_index.len();
        class_index.entry(*y).or_insert(next);
    }
    let num_classes = class_index.len();
    if num_classes < 2 {
        return Err(SmpError::Input("pretext data needs at least 2 classes".into()));
    }

    let mut init_rng = rng.substream("pretrain-init", 0);
    let mut backbone = init_backbone(config, patch_dim, &mut init_rng)?;
    let d = config.embed_dim;
    let mut head = DenseMatrix::from_vec(
        d,
        num_classes,
        init_rng.normal_vec(d * num_classes, INIT_STD),
    )?;
    let zero_deltas = MergedAdapterSet::zeros(config);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng.substream("pretrain-shuffle", 0);
    for epoch in 0..epochs {
        shuffle_rng.shuffle(&mut order);
        for &i in &order {
            let (x, y_raw) = &train[i];
            let y = class_index[y_raw];
            let trace = forward(&backbone, &zero_deltas, x)?;
            let logits: Vec<f64> = (0..num_classes)
                .map(|j| {
                    trace
                        .embedding
                        .iter()
                        .enumerate()
                        .map(|(r, f)| f * head.get(r, j))
                        .sum()
                })
                .collect();
            let (loss, d_logits) = softmax_ce(&logits, y);
            if !loss.is_finite() {
                return Err(SmpError::Numeric(format!(
                    "non-finite pretraining loss at epoch {epoch} sample {i}"
                )));
            }
            // d_emb = head . d_logits, d_head = emb outer d_logits
            let mut d_emb = vec![0.0; d];
            for r in 0..d {
                let mut acc = 0.0;
                for j in 0..num_classes {
                    acc += head.get(r, j) * d_logits[j];
                }
                d_emb[r] = acc;
            }
            let grads = backward(&backbone, &trace, &d_emb)?;
            apply_grads(&mut backbone, &grads, lr)?;
            for r in 0..d {
                for j in 0..num_classes {
                    let w = head.get(r, j) - lr * trace.embedding[r] * d_logits[j];
                    head.set(r, j, w);
                }
            }
        }
    }

    let mut correct = 0usize;
    for (x, y_raw) in holdout {
        let trace = forward(&backbone, &zero_deltas, x)?;
        let mut best = (0usize, f64::NEG_INFINITY);
        for j in 0..num_classes {
            let z: f64 = trace
                .embedding
                .iter()
                .enumerate()
                .map(|(r, f)| f * head.get(r, j))
                .sum();
            if z > best.1 {
                best = (j, z);
            }
        }
        if best.0 == class_index[y_raw] {
            correct += 1;
        }
    }
    let accuracy = if holdout.is_empty() { 0.0 } else { correct as f64 / holdout.len() as f64 };
    Ok((backbone, accuracy))
}
