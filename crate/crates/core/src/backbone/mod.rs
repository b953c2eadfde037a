//! Tiny frozen transformer encoder (surrogate for a pretrained ViT) with
//! trainable low-rank adapters on the key and value projections of every
//! layer. Single-head attention, pre-norm layout, GELU FFN, class-token
//! pooling.

mod backward;
mod forward;
mod pretrain;

pub use backward::{adapter_grads, backward, BackboneGrads, LayerGrads};
pub use forward::{forward, ForwardTrace};
pub use pretrain::{init_backbone, pretrain_backbone};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_patches: usize,
    pub ffn_hidden: usize,
    /// Single head, so the key dimension equals the embedding dimension.
    pub key_dim: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 || self.embed_dim < 4 || self.num_patches < 1 {
            return Err(SmpError::Config(format!(
                "backbone config out of range: L={} d={} N={}",
                self.num_layers, self.embed_dim, self.num_patches
            )));
        }
        if self.key_dim != self.embed_dim {
            return Err(SmpError::Config("single-head layout requires key_dim == embed_dim".into()));
        }
        if self.ffn_hidden < 1 {
            return Err(SmpError::Config("ffn_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-layer frozen weights. Layer norms are stored as vectors of length d.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: DenseMatrix,
    pub w_k0: DenseMatrix,
    pub w_v0: DenseMatrix,
    pub w_out: DenseMatrix,
    pub ffn1: DenseMatrix,
    pub ffn2: DenseMatrix,
    pub ln1_scale: DenseVector,
    pub ln1_shift: DenseVector,
    pub ln2_scale: DenseVector,
    pub ln2_shift: DenseVector,
}

/// The pretrained-surrogate encoder. Immutable after pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBackbone {
    pub config: BackboneConfig,
    pub patch_dim: usize,
    pub patch_embed: DenseMatrix,
    pub class_token: DenseVector,
    pub layers: Vec<LayerWeights>,
}

impl FrozenBackbone {
    pub fn input_len(&self) -> usize {
        self.config.num_patches * self.patch_dim
    }
}

/// A trainable low-rank pair: A is r x d, B is d x r, so B*A is d x d.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl AdapterPair {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// The basic update block Delta W = B * A.
    pub fn delta(&self) -> DenseMatrix {
        self.b.matmul(&self.a).expect("conforming adapter pair")
    }

    pub fn zeros_like(&self) -> AdapterPair {
        AdapterPair {
            a: DenseMatrix::zeros(self.a.rows(), self.a.cols()),
            b: DenseMatrix::zeros(self.b.rows(), self.b.cols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdapters {
    pub key: AdapterPair,
    pub value: AdapterPair,
}

/// One adapter pair per projection (key, value) per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub layers: Vec<LayerAdapters>,
}

impl AdapterSet {
    /// B = 0, A ~ N(0, 0.02^2): the model starts exactly at the frozen point.
    pub fn init(config: &BackboneConfig, rank: usize, rng: &mut SeededRng) -> Result<Self> {
        let d = config.embed_dim;
        if rank >= d {
            return Err(SmpError::Config(format!("adapter rank {rank} must be < d {d}")));
        }
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let mut pair = || -> Result<AdapterPair> {
                Ok(AdapterPair {
                    a: DenseMatrix::from_vec(rank, d, rng.normal_vec(rank * d, 0.02))?,
                    b: DenseMatrix::zeros(d, rank),
                })
            };
            layers.push(LayerAdapters { key: pair()?, value: pair()? });
        }
        Ok(AdapterSet { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Collapse each pair into its product block.
    pub fn to_merged(&self) -> MergedAdapterSet {
        MergedAdapterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerDeltas { key: l.key.delta(), value: l.value.delta() })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> AdapterSet {
        AdapterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerAdapters { key: l.key.zeros_like(), value: l.value.zeros_like() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDeltas {
    pub key: DenseMatrix,
    pub value: DenseMatrix,
}

/// Merged update blocks, one d x d delta per projection per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedAdapterSet {
    pub layers: Vec<LayerDeltas>,
}

impl MergedAdapterSet {
    pub fn zeros(config: &BackboneConfig) -> Self {
        let d = config.embed_dim;
        MergedAdapterSet {
            layers: (0..config.num_layers)
                .map(|_| LayerDeltas {
                    key: DenseMatrix::zeros(d, d),
                    value: DenseMatrix::zeros(d, d),
                })
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// frozen + B*A.
pub fn effective_weight(frozen: &DenseMatrix, pair: &AdapterPair) -> Result<DenseMatrix> {
    if pair.b.cols() != pair.a.rows() {
        return Err(SmpError::Shape("adapter pair ranks disagree".into()));
    }
    frozen.add(&pair.b.matmul(&pair.a)?)
}
