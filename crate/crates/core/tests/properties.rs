//! Property-based invariants over the numeric primitives and the merge
//! algebra, with randomized inputs driven by proptest.

use proptest::prelude::*;

use smp_core::margin::{cosine_logits, loss_discriminative, loss_generalization, CosineClassifier};
use smp_core::metrics::harmonic_accuracy;
use smp_core::numerics::{read_matrix, write_matrix, DenseMatrix};

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-1e6..1e6f64, rows * cols)
        .prop_map(move |data| DenseMatrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // SMPMAT01 files reproduce every bit of the payload.
    #[test]
    fn matrix_roundtrip_is_bitwise((rows, cols) in (1usize..6, 1usize..6), seed in any::<u64>()) {
        let mut rng = smp_core::numerics::SeededRng::new(seed);
        let m = DenseMatrix::from_vec(rows, cols, rng.normal_vec(rows * cols, 10.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mat");
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!(back.data(), m.data());
        prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
    }

    // Scaled-cosine logits are bounded by the scale.
    #[test]
    fn cosine_logits_bounded(w in finite_matrix(4, 3), f in proptest::collection::vec(-1e3..1e3f64, 4)) {
        prop_assume!(f.iter().map(|x| x * x).sum::<f64>() > 1e-12);
        prop_assume!((0..3).all(|c| w.col(c).iter().map(|x| x * x).sum::<f64>() > 1e-12));
        let clf = CosineClassifier::new(w, 16.0, 0.2).unwrap();
        let logits = cosine_logits(&f, &clf).unwrap();
        for l in logits {
            prop_assert!(l.abs() <= 16.0 + 1e-9, "logit {l} outside [-s, s]");
        }
    }

    // The margin only ever increases the loss relative to the plain loss.
    #[test]
    fn margin_never_decreases_loss(seed in any::<u64>(), y in 0usize..3) {
        let mut rng = smp_core::numerics::SeededRng::new(seed);
        let f = rng.normal_vec(5, 1.0);
        let w = DenseMatrix::from_vec(5, 3, rng.normal_vec(15, 1.0)).unwrap();
        let with_margin = CosineClassifier::new(w.clone(), 16.0, 0.2).unwrap();
        let plain = CosineClassifier::new(w, 16.0, 0.2).unwrap();
        let a = loss_discriminative(&f, &with_margin, y).unwrap().loss;
        let b = loss_generalization(&f, &plain, y).unwrap().loss;
        prop_assert!(a >= b - 1e-12, "margin loss {a} below plain loss {b}");
    }

    // Harmonic accuracy is symmetric and never exceeds either input.
    #[test]
    fn harmonic_accuracy_bounds(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let h = harmonic_accuracy(a, b).unwrap();
        let h2 = harmonic_accuracy(b, a).unwrap();
        prop_assert!((h - h2).abs() < 1e-15);
        prop_assert!(h <= a.max(b) + 1e-15);
        prop_assert!(h <= 2.0 * a.min(b) + 1e-15);
    }
}
