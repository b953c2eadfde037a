use crate::error::{Result, SmpError};
use crate::numerics::matrix::{DenseMatrix, DenseVector};
use crate::numerics::rng::SeededRng;

/// Lower-triangular factor of a (possibly floored) PSD matrix.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub lower: DenseMatrix,
    pub floor: f64,
}

impl PsdFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }
}

fn cholesky(sigma: &DenseMatrix, ridge: f64) -> Option<DenseMatrix> {
    let n = sigma.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = sigma.get(i, j) + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Cholesky-style factorization, adding `floor` on the diagonal when the
/// plain factorization fails (rank-deficient few-shot covariances).
pub fn psd_factor(sigma: &DenseMatrix, floor: f64) -> Result<PsdFactor> {
    let n = sigma.rows();
    if sigma.cols() != n {
        return Err(SmpError::Shape(format!("psd_factor on {}x{}", n, sigma.cols())));
    }
    for i in 0..n {
        for j in 0..i {
            if (sigma.get(i, j) - sigma.get(j, i)).abs() > 1e-9 {
                return Err(SmpError::Shape(format!(
                    "asymmetric input at ({i},{j}): {} vs {}",
                    sigma.get(i, j),
                    sigma.get(j, i)
                )));
            }
        }
    }
    if let Some(lower) = cholesky(sigma, 0.0) {
        return Ok(PsdFactor { lower, floor });
    }
    match cholesky(sigma, floor) {
        Some(lower) => Ok(PsdFactor { lower, floor }),
        None => Err(SmpError::Numeric(
            "matrix not positive semidefinite even after flooring".into(),
        )),
    }
}

/// mean + L z with z a standard-normal vector drawn from `rng`.
pub fn sample_gaussian(
    mean: &[f64],
    factor: &PsdFactor,
    rng: &mut SeededRng,
) -> Result<DenseVector> {
    let n = factor.dim();
    if mean.len() != n {
        return Err(SmpError::Shape(format!(
            "mean length {} != factor dim {}",
            mean.len(),
            n
        )));
    }
    let z: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
    let mut out = mean.to_vec();
    for i in 0..n {
        let row = factor.lower.row(i);
        let mut acc = 0.0;
        for j in 0..=i {
            acc += row[j] * z[j];
        }
        out[i] += acc;
    }
    Ok(out)
}
