//! Dense `f64` tensors, reverse-mode differentiation and small-matrix
//! factorizations.

mod graph;
mod jacobian;
pub mod kernels;
mod linalg;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use jacobian::{jacobian, MAX_JACOBIAN_ENTRIES};
pub use linalg::{svd, sym_eigen, Svd, SymEigen, JACOBI_TOL, MAX_SVD_DIM, MAX_SWEEPS};
pub use tensor::Tensor;


use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{what} did not converge within {sweeps} sweeps")]
    NoConvergence { what: &'static str, sweeps: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, rng: &mut R) -> Result<Tensor, NumericsError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NumericsError::InvalidArgument(format!("dropout probability {} outside [0, 1)", p)));
    }
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let data = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_mask_values_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = dropout_mask(&[100, 100], 0.3, &mut rng).unwrap();
        let dropped = m.data().iter().filter(|v| **v == 0.0).count() as f64 / 10_000.0;
        assert!((dropped - 0.3).abs() < 0.02);
        assert!(m.data().iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.7).abs() < 1e-15));
        // the expectation is preserved
        assert!((m.mean() - 1.0).abs() < 0.03);
    }

    #[test]
    fn dropout_probability_is_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask(&[2], 1.0, &mut rng).is_err());
        assert!(dropout_mask(&[2], -0.1, &mut rng).is_err());
        assert!(dropout_mask(&[2], 0.0, &mut rng).unwrap().data().iter().all(|v| *v == 1.0));
    }
}
