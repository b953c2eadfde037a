//! Deterministic dense linear algebra, seeded randomness, PSD factorization
//! and the finite-difference gradient-checking oracle used by every other
//! module's tests.

pub mod gradcheck;
pub mod io;
pub mod matrix;
pub mod psd;
pub mod rng;

pub use gradcheck::grad_check;
pub use io::{read_matrix, write_matrix, MATRIX_MAGIC};
pub use matrix::{dot, norm, DenseMatrix, DenseVector};
pub use psd::{psd_factor, sample_gaussian, PsdFactor};
pub use rng::SeededRng;

/// Default diagonal floor for covariance factorization. Covariances from
/// 5-shot or small base classes are rank-deficient.
pub const DEFAULT_PSD_FLOOR: f64 = 1e-6;
