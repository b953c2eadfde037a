use crate::error::{Result, SmpError};
use crate::numerics::matrix::DenseMatrix;

/// Central-difference gradient check.
///
/// Returns the maximum over all parameter entries of
/// |analytic - central difference| / max(1, |central difference|).
pub fn grad_check<F>(
    f: F,
    params: &[DenseMatrix],
    analytic: &[DenseMatrix],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&[DenseMatrix]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(SmpError::Shape("params/analytic count mismatch".into()));
    }
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut max_err = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.rows() != params[pi].rows() || grad.cols() != params[pi].cols() {
            return Err(SmpError::Shape(format!("gradient shape mismatch at param {pi}")));
        }
        for idx in 0..params[pi].data().len() {
            let orig = work[pi].data()[idx];
            work[pi].data_mut()[idx] = orig + eps;
            let fp = f(&work)?;
            work[pi].data_mut()[idx] = orig - eps;
            let fm = f(&work)?;
            work[pi].data_mut()[idx] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(SmpError::Numeric("non-finite function value in grad_check".into()));
            }
            let fd = (fp - fm) / (2.0 * eps);
            let a = grad.data()[idx];
            let err = (a - fd).abs() / fd.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
