//! Scaled-cosine classification logits and the two complementary losses:
//! discriminative (margin-penalized) and generalization (plain), with exact
//! gradients on both the feature and the classifier weights.

use crate::error::{Result, SmpError};
use crate::numerics::{dot, norm, DenseMatrix, DenseVector};

/// Fixed logit scale.
pub const DEFAULT_SCALE: f64 = 16.0;
/// Default margin size.
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Per-class weight columns plus the fixed scale and margin.
/// Columns are not re-normalized; the cosine handles scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    pub weights: DenseMatrix,
    pub scale: f64,
    pub margin: f64,
}

impl CosineClassifier {
    pub fn new(weights: DenseMatrix, scale: f64, margin: f64) -> Result<Self> {
        if weights.cols() < 2 {
            return Err(SmpError::Input("classifier needs at least 2 classes".into()));
        }
        if scale <= 0.0 || margin < 0.0 {
            return Err(SmpError::Config(format!("invalid scale {scale} or margin {margin}")));
        }
        Ok(CosineClassifier { weights, scale, margin })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }
}

fn check_norms(f: &[f64], clf: &CosineClassifier) -> Result<(f64, Vec<f64>)> {
    if f.len() != clf.dim() {
        return Err(SmpError::Shape(format!(
            "feature dim {} != classifier dim {}",
            f.len(),
            clf.dim()
        )));
    }
    let f_norm = norm(f);
    if f_norm == 0.0 {
        return Err(SmpError::Degenerate("zero-norm feature".into()));
    }
    let mut col_norms = Vec::with_capacity(clf.num_classes());
    for j in 0..clf.num_classes() {
        let n = norm(&clf.weights.col(j));
        if n == 0.0 {
            return Err(SmpError::Degenerate(format!("zero-norm weight column {j}")));
        }
        col_norms.push(n);
    }
    Ok((f_norm, col_norms))
}

/// s * cos(theta_j) for every class.
pub fn cosine_logits(f: &[f64], clf: &CosineClassifier) -> Result<DenseVector> {
    let (f_norm, col_norms) = check_norms(f, clf)?;
    Ok((0..clf.num_classes())
        .map(|j| clf.scale * dot(&clf.weights.col(j), f) / (col_norms[j] * f_norm))
        .collect())
}

/// Argmax class over cosine logits; margin is never applied at inference.
pub fn predict(f: &[f64], clf: &CosineClassifier) -> Result<usize> {
    let logits = cosine_logits(f, clf)?;
    let mut best = 0usize;
    for j in 1..logits.len() {
        if logits[j] > logits[best] {
            best = j;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Discriminative,
    Generalization,
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_f: DenseVector,
    pub grad_w: DenseMatrix,
}

fn loss_with_margin(f: &[f64], clf: &CosineClassifier, y: usize, m: f64) -> Result<LossGrads> {
    let c = clf.num_classes();
    if y >= c {
        return Err(SmpError::Input(format!("label {y} out of range for {c} classes")));
    }
    let (f_norm, col_norms) = check_norms(f, clf)?;
    let cosines: Vec<f64> = (0..c)
        .map(|j| dot(&clf.weights.col(j), f) / (col_norms[j] * f_norm))
        .collect();

    // Log-sum-exp with max subtraction; e^16 degrades naive pipelines.
    let logits: Vec<f64> = (0..c)
        .map(|j| clf.scale * (cosines[j] - if j == y { m } else { 0.0 }))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[y] - max);

    let mut grad_f = vec![0.0; f.len()];
    let mut grad_w = DenseMatrix::zeros(clf.dim(), c);
    for j in 0..c {
        let d_cos = clf.scale * (exps[j] / sum - if j == y { 1.0 } else { 0.0 });
        let w = clf.weights.col(j);
        let inv = 1.0 / (col_norms[j] * f_norm);
        for r in 0..f.len() {
            grad_f[r] += d_cos * (w[r] * inv - cosines[j] * f[r] / (f_norm * f_norm));
        }
        for r in 0..f.len() {
            let g = d_cos * (f[r] * inv - cosines[j] * w[r] / (col_norms[j] * col_norms[j]));
            grad_w.set(r, j, g);
        }
    }
    Ok(LossGrads { loss, grad_f, grad_w })
}

/// Margin-penalized softmax cross-entropy: the margin is subtracted from the
/// target-class cosine before scaling.
pub fn loss_discriminative(f: &[f64], clf: &CosineClassifier, y: usize) -> Result<LossGrads> {
    loss_with_margin(f, clf, y, clf.margin)
}

/// Plain softmax cross-entropy over scaled cosines.
pub fn loss_generalization(f: &[f64], clf: &CosineClassifier, y: usize) -> Result<LossGrads> {
    loss_with_margin(f, clf, y, 0.0)
}

pub fn loss(kind: LossKind, f: &[f64], clf: &CosineClassifier, y: usize) -> Result<LossGrads> {
    match kind {
        LossKind::Discriminative => loss_discriminative(f, clf, y),
        LossKind::Generalization => loss_generalization(f, clf, y),
    }
}

#[derive(Debug, Clone)]
pub struct BatchLossGrads {
    pub loss: f64,
    /// Row i holds the mean-loss gradient for sample i's feature.
    pub grad_features: DenseMatrix,
    pub grad_w: DenseMatrix,
}

/// Arithmetic mean of per-sample losses; gradients summed then divided by
/// batch size in a fixed order.
pub fn batch_loss(
    features: &DenseMatrix,
    labels: &[usize],
    clf: &CosineClassifier,
    kind: LossKind,
) -> Result<BatchLossGrads> {
    if features.rows() == 0 || features.rows() != labels.len() {
        return Err(SmpError::Input(format!(
            "batch of {} features with {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let b = features.rows() as f64;
    let mut total = 0.0;
    let mut grad_features = DenseMatrix::zeros(features.rows(), features.cols());
    let mut grad_w = DenseMatrix::zeros(clf.dim(), clf.num_classes());
    for i in 0..features.rows() {
        let lg = loss(kind, features.row(i), clf, labels[i])?;
        total += lg.loss;
        for (dst, src) in grad_features.row_mut(i).iter_mut().zip(&lg.grad_f) {
            *dst = src / b;
        }
        grad_w.add_assign(&lg.grad_w)?;
    }
    Ok(BatchLossGrads {
        loss: total / b,
        grad_features,
        grad_w: grad_w.scale(1.0 / b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, SeededRng};

    fn clf_from_cols(cols: &[Vec<f64>], s: f64, m: f64) -> CosineClassifier {
        let d = cols[0].len();
        let mut w = DenseMatrix::zeros(d, cols.len());
        for (j, c) in cols.iter().enumerate() {
            w.set_col(j, c);
        }
        CosineClassifier::new(w, s, m).unwrap()
    }

    #[test]
    fn logit_parallel_is_scale() {
        let clf = clf_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]], 16.0, 0.0);
        let logits = cosine_logits(&[2.0, 0.0], &clf).unwrap();
        assert!((logits[0] - 16.0).abs() < 1e-12);
        assert!(logits[1].abs() < 1e-12);
    }

    #[test]
    fn logit_scale_invariance() {
        let clf = clf_from_cols(&[vec![3.0, 1.0], vec![-1.0, 2.0]], 16.0, 0.0);
        let a = cosine_logits(&[1.5, 0.5], &clf).unwrap();
        // f = w_0 / 2 gives the target logit exactly s.
        assert!((a[0] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_feature_rejected() {
        let clf = clf_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]], 16.0, 0.0);
        assert!(matches!(
            cosine_logits(&[0.0, 0.0], &clf),
            Err(SmpError::Degenerate(_))
        ));
    }

    #[test]
    fn discriminative_scalar_values() {
        // C=2, cos=(1,0), y=0, s=16: loss = log(1 + e^-16).
        let clf = clf_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]], 16.0, 0.0);
        let lg = loss_discriminative(&[1.0, 0.0], &clf, 0).unwrap();
        let want = (1.0 + (-16.0f64).exp()).ln();
        assert!((lg.loss - want).abs() < 1e-18, "loss {}", lg.loss);
        assert!((lg.loss - 1.1254e-7).abs() < 1e-10);

        // Same with m=0.2: loss = log(1 + e^-12.8).
        let clf = clf_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]], 16.0, 0.2);
        let lg = loss_discriminative(&[1.0, 0.0], &clf, 0).unwrap();
        let want = (1.0 + (-12.8f64).exp()).ln();
        assert!((lg.loss - want).abs() < 1e-18);
        assert!((lg.loss - 2.760e-6).abs() < 1e-9);
    }

    #[test]
    fn generalization_uniform_is_log_c() {
        // All columns identical: every cosine equal, loss = log C.
        let clf = clf_from_cols(
            &[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            16.0,
            0.0,
        );
        let lg = loss_generalization(&[0.3, -0.7], &clf, 1).unwrap();
        assert!((lg.loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn margin_zero_reduces_to_generalization() {
        let mut rng = SeededRng::new(21);
        for _ in 0..100 {
            let d = 6;
            let c = 4;
            let w = DenseMatrix::from_vec(d, c, rng.normal_vec(d * c, 1.0)).unwrap();
            let clf = CosineClassifier::new(w, 16.0, 0.0).unwrap();
            let f = rng.normal_vec(d, 1.0);
            let y = (rng.next_below(c as u64)) as usize;
            let a = loss_discriminative(&f, &clf, y).unwrap();
            let b = loss_generalization(&f, &clf, y).unwrap();
            assert!((a.loss - b.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_monotonicity() {
        let mut rng = SeededRng::new(33);
        let d = 5;
        let c = 3;
        let w = DenseMatrix::from_vec(d, c, rng.normal_vec(d * c, 1.0)).unwrap();
        let f = rng.normal_vec(d, 1.0);
        let mut prev = -1.0;
        for k in 0..=10 {
            let m = 0.05 * k as f64;
            let clf = CosineClassifier::new(w.clone(), 16.0, m).unwrap();
            let lg = loss_discriminative(&f, &clf, 1).unwrap();
            assert!(lg.loss > prev, "loss not increasing at m={m}");
            prev = lg.loss;
        }
    }

    #[test]
    fn scale_invariance_of_losses() {
        let mut rng = SeededRng::new(4);
        let d = 7;
        let w = DenseMatrix::from_vec(d, 4, rng.normal_vec(d * 4, 1.0)).unwrap();
        let clf = CosineClassifier::new(w, 16.0, 0.2).unwrap();
        let f = rng.normal_vec(d, 1.0);
        let f2: Vec<f64> = f.iter().map(|v| v * 3.7).collect();
        let a = loss_discriminative(&f, &clf, 2).unwrap();
        let b = loss_discriminative(&f2, &clf, 2).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-10);
        assert_eq!(predict(&f, &clf).unwrap(), predict(&f2, &clf).unwrap());
    }

    #[test]
    fn gradients_exact_for_both_losses() {
        let mut rng = SeededRng::new(77);
        let d = 8;
        let c = 5;
        for trial in 0..100 {
            let w = DenseMatrix::from_vec(d, c, rng.normal_vec(d * c, 1.0)).unwrap();
            let f = DenseMatrix::from_vec(1, d, rng.normal_vec(d, 1.0)).unwrap();
            let y = rng.next_below(c as u64) as usize;
            for kind in [LossKind::Discriminative, LossKind::Generalization] {
                let clf = CosineClassifier::new(w.clone(), 16.0, 0.2).unwrap();
                let lg = loss(kind, f.row(0), &clf, y).unwrap();
                let grad_f = DenseMatrix::from_vec(1, d, lg.grad_f.clone()).unwrap();
                let err = grad_check(
                    |p| {
                        let clf2 = CosineClassifier::new(p[1].clone(), 16.0, 0.2).unwrap();
                        Ok(loss(kind, p[0].row(0), &clf2, y)?.loss)
                    },
                    &[f.clone(), w.clone()],
                    &[grad_f, lg.grad_w.clone()],
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-6, "trial {trial} kind {kind:?} err {err}");
            }
        }
    }

    #[test]
    fn batch_loss_matches_single() {
        let mut rng = SeededRng::new(8);
        let d = 6;
        let w = DenseMatrix::from_vec(d, 3, rng.normal_vec(d * 3, 1.0)).unwrap();
        let clf = CosineClassifier::new(w, 16.0, 0.2).unwrap();
        let f = rng.normal_vec(d, 1.0);
        let one = DenseMatrix::from_vec(1, d, f.clone()).unwrap();
        let single = loss_discriminative(&f, &clf, 1).unwrap();
        let batch = batch_loss(&one, &[1], &clf, LossKind::Discriminative).unwrap();
        assert!((batch.loss - single.loss).abs() < 1e-15);

        // Duplicated sample: same mean loss, batch grads are per-sample means.
        let two = DenseMatrix::from_rows(&[f.clone(), f.clone()]).unwrap();
        let dup = batch_loss(&two, &[1, 1], &clf, LossKind::Discriminative).unwrap();
        assert!((dup.loss - single.loss).abs() < 1e-15);
        for (a, b) in dup.grad_w.data().iter().zip(single.grad_w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_grads_are_mean_of_per_sample() {
        let mut rng = SeededRng::new(12);
        let d = 5;
        let c = 4;
        let n = 7;
        let w = DenseMatrix::from_vec(d, c, rng.normal_vec(d * c, 1.0)).unwrap();
        let clf = CosineClassifier::new(w, 16.0, 0.2).unwrap();
        let feats = DenseMatrix::from_vec(n, d, rng.normal_vec(n * d, 1.0)).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let batch = batch_loss(&feats, &labels, &clf, LossKind::Generalization).unwrap();
        let mut acc = DenseMatrix::zeros(d, c);
        for i in 0..n {
            acc.add_assign(&loss_generalization(feats.row(i), &clf, labels[i]).unwrap().grad_w)
                .unwrap();
        }
        let mean = acc.scale(1.0 / n as f64);
        for (a, b) in batch.grad_w.data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let clf = clf_from_cols(&[vec![1.0, 0.0], vec![0.0, 1.0]], 16.0, 0.0);
        let feats = DenseMatrix::zeros(0, 2);
        assert!(matches!(
            batch_loss(&feats, &[], &clf, LossKind::Generalization),
            Err(SmpError::Input(_))
        ));
    }
}
