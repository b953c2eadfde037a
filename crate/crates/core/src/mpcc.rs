//! Classifier calibration with pseudo-feature replay: per-class Gaussian
//! statistics in embedding space, covariance borrowing for few-shot classes,
//! balanced batches mixing Gaussian draws with real current-task features,
//! and margin-penalized fine-tuning of the classifier weights only.

use crate::error::{Result, SmpError};
use crate::margin::{batch_loss, CosineClassifier, LossKind};
use crate::numerics::{
    dot, norm, psd_factor, sample_gaussian, DenseMatrix, DenseVector, PsdFactor, SeededRng,
    DEFAULT_PSD_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    Estimated,
    Borrowed,
}

/// Gaussian summary of one class in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub prototype: DenseVector,
    pub sigma: DenseMatrix,
    pub source: StatsSource,
    pub sample_count: usize,
}

/// Mean and biased covariance (divisor N) of the feature rows.
pub fn estimate_class_stats(features: &DenseMatrix) -> Result<ClassStats> {
    let n = features.rows();
    let d = features.cols();
    if n == 0 {
        return Err(SmpError::Input("no features for class statistics".into()));
    }
    let mut prototype = vec![0.0; d];
    for i in 0..n {
        for (p, v) in prototype.iter_mut().zip(features.row(i)) {
            *p += v;
        }
    }
    for p in prototype.iter_mut() {
        *p /= n as f64;
    }
    let mut sigma = DenseMatrix::zeros(d, d);
    for i in 0..n {
        let row = features.row(i);
        for a in 0..d {
            let da = row[a] - prototype[a];
            for b in a..d {
                let v = da * (row[b] - prototype[b]);
                sigma.set(a, b, sigma.get(a, b) + v);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = sigma.get(a, b) / n as f64;
            sigma.set(a, b, v);
            sigma.set(b, a, v);
        }
    }
    Ok(ClassStats { prototype, sigma, source: StatsSource::Estimated, sample_count: n })
}

/// Statistics for every base class, in the given order.
pub fn estimate_base_stats(features_per_class: &[DenseMatrix]) -> Result<Vec<ClassStats>> {
    if features_per_class.is_empty() {
        return Err(SmpError::Input("no base classes".into()));
    }
    features_per_class.iter().map(estimate_class_stats).collect()
}

/// Index of the base class whose prototype has the highest cosine similarity
/// to `proto`; ties go to the lowest index.
pub fn nearest_base_class(proto: &[f64], base_stats: &[ClassStats]) -> Result<usize> {
    if base_stats.is_empty() {
        return Err(SmpError::Input("no base statistics to borrow from".into()));
    }
    let pn = norm(proto);
    if pn == 0.0 {
        return Err(SmpError::Degenerate("zero-norm prototype".into()));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, stats) in base_stats.iter().enumerate() {
        let bn = norm(&stats.prototype);
        if bn == 0.0 {
            return Err(SmpError::Degenerate(format!("zero-norm base prototype {j}")));
        }
        let cos = dot(proto, &stats.prototype) / (pn * bn);
        if cos > best.1 {
            best = (j, cos);
        }
    }
    Ok(best.0)
}

/// Pair a few-shot prototype with the covariance of its most similar base
/// class.
pub fn borrow_covariance(proto: &[f64], base_stats: &[ClassStats]) -> Result<ClassStats> {
    let donor = nearest_base_class(proto, base_stats)?;
    Ok(ClassStats {
        prototype: proto.to_vec(),
        sigma: base_stats[donor].sigma.clone(),
        source: StatsSource::Borrowed,
        sample_count: 0,
    })
}

/// Balanced calibration batch: `per_class` rows for every listed class.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub per_class: usize,
}

fn factor_for(sigma: &DenseMatrix) -> Result<PsdFactor> {
    // An all-zero covariance means "sample the mean exactly" rather than
    // "inflate to the floor ridge".
    if sigma.frobenius_norm() == 0.0 {
        return Ok(PsdFactor { lower: DenseMatrix::zeros(sigma.rows(), sigma.cols()), floor: 0.0 });
    }
    psd_factor(sigma, DEFAULT_PSD_FLOOR)
}

struct BaseEntry {
    label: usize,
    prototype: DenseVector,
    clf_column: DenseVector,
    factor: PsdFactor,
}

struct PseudoEntry {
    label: usize,
    prototype: DenseVector,
    factor: PsdFactor,
}

struct RealEntry {
    label: usize,
    features: DenseMatrix,
}

/// Draws fresh balanced batches. Labels are whatever ids the caller supplies
/// (typically classifier column indices).
pub struct BatchBuilder {
    base: Vec<BaseEntry>,
    pseudo: Vec<PseudoEntry>,
    real: Vec<RealEntry>,
    per_class: usize,
    dim: usize,
}

impl BatchBuilder {
    /// `base`: (label, estimated stats, matching column of the base-trained
    /// discriminative classifier). `pseudo`: previously added few-shot
    /// classes with borrowed covariances. `real`: current-session classes
    /// with their real feature rows.
    pub fn new(
        base: &[(usize, &ClassStats, DenseVector)],
        pseudo: &[(usize, &ClassStats)],
        real: &[(usize, DenseMatrix)],
        per_class: usize,
    ) -> Result<Self> {
        if per_class == 0 {
            return Err(SmpError::Input("per_class must be >= 1".into()));
        }
        if base.is_empty() {
            return Err(SmpError::Input("batch needs at least the base classes".into()));
        }
        let dim = base[0].1.prototype.len();
        let mut builder = BatchBuilder {
            base: Vec::with_capacity(base.len()),
            pseudo: Vec::with_capacity(pseudo.len()),
            real: Vec::with_capacity(real.len()),
            per_class,
            dim,
        };
        for (label, stats, clf_column) in base {
            if stats.prototype.len() != dim || clf_column.len() != dim {
                return Err(SmpError::Shape("base class dimension mismatch".into()));
            }
            builder.base.push(BaseEntry {
                label: *label,
                prototype: stats.prototype.clone(),
                clf_column: clf_column.clone(),
                factor: factor_for(&stats.sigma)?,
            });
        }
        for (label, stats) in pseudo {
            if stats.prototype.len() != dim {
                return Err(SmpError::Shape("pseudo class dimension mismatch".into()));
            }
            builder.pseudo.push(PseudoEntry {
                label: *label,
                prototype: stats.prototype.clone(),
                factor: factor_for(&stats.sigma)?,
            });
        }
        for (label, features) in real {
            if features.rows() == 0 {
                return Err(SmpError::Input(format!("class {label} has no real features")));
            }
            if features.cols() != dim {
                return Err(SmpError::Shape("real feature dimension mismatch".into()));
            }
            builder.real.push(RealEntry { label: *label, features: features.clone() });
        }
        Ok(builder)
    }

    pub fn num_classes(&self) -> usize {
        self.base.len() + self.pseudo.len() + self.real.len()
    }

    /// One balanced batch. Base-class rows alternate between the
    /// prototype-centered and classifier-column-centered Gaussians (even
    /// indices go to the prototype, so an odd count favors it); previous
    /// few-shot classes draw from their borrowed Gaussians; current classes
    /// cycle their real rows.
    pub fn build(&self, rng: &mut SeededRng) -> Result<EmbeddingBatch> {
        let rows = self.per_class * self.num_classes();
        let mut features = DenseMatrix::zeros(rows, self.dim);
        let mut labels = Vec::with_capacity(rows);
        let mut row = 0;
        let mut push = |features: &mut DenseMatrix, values: &[f64], label: usize| {
            features.row_mut(row).copy_from_slice(values);
            labels.push(label);
            row += 1;
        };
        for entry in &self.base {
            for i in 0..self.per_class {
                let mean = if i % 2 == 0 { &entry.prototype } else { &entry.clf_column };
                let sample = sample_gaussian(mean, &entry.factor, rng)?;
                push(&mut features, &sample, entry.label);
            }
        }
        for entry in &self.pseudo {
            for _ in 0..self.per_class {
                let sample = sample_gaussian(&entry.prototype, &entry.factor, rng)?;
                push(&mut features, &sample, entry.label);
            }
        }
        for entry in &self.real {
            for i in 0..self.per_class {
                let src = entry.features.row(i % entry.features.rows()).to_vec();
                push(&mut features, &src, entry.label);
            }
        }
        Ok(EmbeddingBatch { features, labels, per_class: self.per_class })
    }
}

/// SGD on the classifier weights only, over freshly drawn balanced batches
/// scored with the margin-penalized loss. Batch labels must be column
/// indices of `w_init`.
pub fn calibrate(
    w_init: &DenseMatrix,
    builder: &BatchBuilder,
    scale: f64,
    margin: f64,
    lr: f64,
    iters: usize,
    rng: &mut SeededRng,
) -> Result<DenseMatrix> {
    let mut weights = w_init.clone();
    for iter in 0..iters {
        let batch = builder.build(rng)?;
        let clf = CosineClassifier::new(weights.clone(), scale, margin)?;
        let grads = batch_loss(&batch.features, &batch.labels, &clf, LossKind::Discriminative)?;
        if !grads.loss.is_finite() {
            return Err(SmpError::Numeric(format!(
                "non-finite calibration loss at iteration {iter}"
            )));
        }
        weights.step(&grads.grad_w, lr)?;
    }
    Ok(weights)
}
