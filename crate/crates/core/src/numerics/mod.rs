//! Dense small-matrix kernels shared by every spectral routine.

mod eig;
pub mod rng;
mod tensor;

pub use eig::symmetric_eig_descending;
pub use rng::rademacher_matrix;
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

/// Euclidean norm of every column of a `p × q` matrix.
pub fn column_norms(a: &Tensor) -> Vec<f64> {
    let (p, q) = (a.rows(), a.cols());
    let mut sq = vec![0.0; q];
    for i in 0..p {
        for (j, s) in sq.iter_mut().enumerate() {
            let x = a.get(i, j);
            *s += x * x;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_norm_examples() {
        let a = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(column_norms(&a), vec![5.0]);
        assert_eq!(column_norms(&Tensor::zeros(&[2, 2])), vec![0.0, 0.0]);
        let b = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(column_norms(&b), vec![2f64.sqrt(), 1.0]);
    }
}
