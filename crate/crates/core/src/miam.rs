//! Margin-aware intra-task adapter merging: diagonal Fisher statistics of
//! both trained adapter sets under the generalization loss, Frobenius-norm
//! importance weights, and block-wise merging into a single merged set.

use serde::{Deserialize, Serialize};

use crate::backbone::{backward, forward, AdapterSet, FrozenBackbone, LayerDeltas, MergedAdapterSet};
use crate::error::{Result, SmpError};
use crate::margin::{loss_generalization, CosineClassifier};
use crate::numerics::DenseMatrix;

/// Diagonal Fisher for one update block plus its Frobenius norm.
#[derive(Debug, Clone)]
pub struct BlockFisher {
    pub fisher_diag: DenseMatrix,
    pub frob_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LayerFisher {
    pub key: BlockFisher,
    pub value: BlockFisher,
}

/// Per-layer, per-block E[(dL_g / dDeltaW)^2] over the base training set.
#[derive(Debug, Clone)]
pub struct FisherStats {
    pub layers: Vec<LayerFisher>,
}

/// Convex merge coefficients per layer and block.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub fis_d: f64,
    pub fis_g: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct LayerWeightsPair {
    pub key: BlockWeights,
    pub value: BlockWeights,
}

#[derive(Debug, Clone)]
pub struct MergeWeights {
    pub layers: Vec<LayerWeightsPair>,
}

/// Empirical diagonal Fisher of the generalization loss with respect to each
/// effective update block, averaged per sample (effective batch size 1) with
/// true labels.
pub fn fisher_diag(
    backbone: &FrozenBackbone,
    adapters: &AdapterSet,
    clf: &CosineClassifier,
    data: &[(Vec<f64>, usize)],
) -> Result<FisherStats> {
    if data.is_empty() {
        return Err(SmpError::Input("empty dataset for Fisher estimation".into()));
    }
    let deltas = adapters.to_merged();
    let d = backbone.config.embed_dim;
    let mut acc: Vec<LayerFisher> = (0..backbone.config.num_layers)
        .map(|_| LayerFisher {
            key: BlockFisher { fisher_diag: DenseMatrix::zeros(d, d), frob_norm: 0.0 },
            value: BlockFisher { fisher_diag: DenseMatrix::zeros(d, d), frob_norm: 0.0 },
        })
        .collect();
    for (x, y) in data {
        let trace = forward(backbone, &deltas, x)?;
        let lg = loss_generalization(&trace.embedding, clf, *y)?;
        let grads = backward(backbone, &trace, &lg.grad_f)?;
        for (a, g) in acc.iter_mut().zip(&grads.layers) {
            for (dst, src) in a.key.fisher_diag.data_mut().iter_mut().zip(g.w_k.data()) {
                *dst += src * src;
            }
            for (dst, src) in a.value.fisher_diag.data_mut().iter_mut().zip(g.w_v.data()) {
                *dst += src * src;
            }
        }
    }
    let inv = 1.0 / data.len() as f64;
    for a in acc.iter_mut() {
        for block in [&mut a.key, &mut a.value] {
            for v in block.fisher_diag.data_mut() {
                *v *= inv;
            }
            block.frob_norm = block.fisher_diag.frobenius_norm();
        }
    }
    Ok(FisherStats { layers: acc })
}

const NORM_FLOOR: f64 = 1e-12;

fn block_weights(frob_d: f64, frob_g: f64) -> BlockWeights {
    let sum = frob_d + frob_g;
    if sum < NORM_FLOOR {
        // Degenerate Fisher: fall back to an even split.
        BlockWeights { fis_d: 0.5, fis_g: 0.5, fallback: true }
    } else {
        BlockWeights { fis_d: frob_d / sum, fis_g: frob_g / sum, fallback: false }
    }
}

/// Frobenius-norm-normalized importance weights per block.
pub fn fis_weights(fisher_d: &FisherStats, fisher_g: &FisherStats) -> Result<MergeWeights> {
    if fisher_d.layers.len() != fisher_g.layers.len() {
        return Err(SmpError::Shape("Fisher stats layer counts differ".into()));
    }
    Ok(MergeWeights {
        layers: fisher_d
            .layers
            .iter()
            .zip(&fisher_g.layers)
            .map(|(fd, fg)| LayerWeightsPair {
                key: block_weights(fd.key.frob_norm, fg.key.frob_norm),
                value: block_weights(fd.value.frob_norm, fg.value.frob_norm),
            })
            .collect(),
    })
}

/// Block-wise convex combination of the two sets' update products.
pub fn merge_adapters(
    set_d: &AdapterSet,
    set_g: &AdapterSet,
    weights: &MergeWeights,
) -> Result<MergedAdapterSet> {
    if set_d.num_layers() != set_g.num_layers() || set_d.num_layers() != weights.layers.len() {
        return Err(SmpError::Shape("adapter set / weight layer counts differ".into()));
    }
    let mut layers = Vec::with_capacity(set_d.num_layers());
    for ((ld, lg), w) in set_d.layers.iter().zip(&set_g.layers).zip(&weights.layers) {
        let key = ld
            .key
            .delta()
            .scale(w.key.fis_d)
            .add(&lg.key.delta().scale(w.key.fis_g))?;
        let value = ld
            .value
            .delta()
            .scale(w.value.fis_d)
            .add(&lg.value.delta().scale(w.value.fis_g))?;
        layers.push(LayerDeltas { key, value });
    }
    Ok(MergedAdapterSet { layers })
}

/// One report row per (layer, block): Fisher magnitudes and merge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReportRow {
    pub layer: usize,
    pub block: String,
    pub frob_d: f64,
    pub frob_g: f64,
    pub fis_d: f64,
    pub fis_g: f64,
    pub fallback: bool,
}

pub type MergeReport = Vec<MergeReportRow>;

pub fn export_merge_report(
    fisher_d: &FisherStats,
    fisher_g: &FisherStats,
    weights: &MergeWeights,
) -> MergeReport {
    let mut rows = Vec::with_capacity(2 * weights.layers.len());
    for (l, ((fd, fg), w)) in fisher_d
        .layers
        .iter()
        .zip(&fisher_g.layers)
        .zip(&weights.layers)
        .enumerate()
    {
        rows.push(MergeReportRow {
            layer: l,
            block: "key".into(),
            frob_d: fd.key.frob_norm,
            frob_g: fg.key.frob_norm,
            fis_d: w.key.fis_d,
            fis_g: w.key.fis_g,
            fallback: w.key.fallback,
        });
        rows.push(MergeReportRow {
            layer: l,
            block: "value".into(),
            frob_d: fd.value.frob_norm,
            frob_g: fg.value.frob_norm,
            fis_d: w.value.fis_d,
            fis_g: w.value.fis_g,
            fallback: w.value.fallback,
        });
    }
    rows
}
