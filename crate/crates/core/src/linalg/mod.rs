mod decomp;
mod io;
mod matrix;

pub use decomp::{pinv_singular_values, qr, svd, sym_eig, Svd, SymEig};
pub use io::{read_matrix_csv, write_matrix_csv};
pub use matrix::Matrix;
pub(crate) use matrix::dot;

use crate::{Rng, Scalar};

/// Default relative cutoff for pseudo-inverses.
pub const PINV_THRESHOLD: f64 = 1e-10;

/// i.i.d. `N(0, std^2)` entries.
pub fn random_gaussian<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    Matrix::from_vec(rows, cols, rng.normals(rows * cols, std)).expect("sized buffer")
}

/// Haar orthogonal matrix: QR of a Gaussian matrix with a positive `R` diagonal.
pub fn random_orthogonal<T: Scalar>(rng: &mut Rng, dim: usize) -> Matrix<T> {
    let g = random_gaussian::<T>(rng, dim, dim, 1.0);
    qr(&g).expect("square input").0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_zero() {
        let mut rng = Rng::new(0);
        assert_eq!(random_gaussian::<f64>(&mut rng, 3, 4, 0.0), Matrix::zeros(3, 4));
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(17);
        let g = random_gaussian::<f64>(&mut rng, 1000, 100, 1.0);
        let mean = g.mean();
        let var = g.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn gaussian_deterministic() {
        let a = random_gaussian::<f64>(&mut Rng::new(4), 5, 5, 2.0);
        let b = random_gaussian::<f64>(&mut Rng::new(4), 5, 5, 2.0);
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_dim_one() {
        let q = random_orthogonal::<f64>(&mut Rng::new(2), 1);
        assert_eq!(q[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn orthogonal_columns() {
        let q = random_orthogonal::<f64>(&mut Rng::new(8), 64);
        assert!(q.gram().sub(&Matrix::identity(64)).unwrap().max_abs() < 1e-10);
        assert!(q.outer_gram().sub(&Matrix::identity(64)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn orthogonal_first_column_is_uniform() {
        // E[q_11^2] = 1/d for Haar measure.
        let d = 8;
        let mut rng = Rng::new(21);
        let trials = 4000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let q = random_orthogonal::<f64>(&mut rng, d);
            acc += q[(0, 0)].powi(2);
        }
        let mean = acc / trials as f64;
        assert!((mean - 1.0 / d as f64).abs() < 0.01, "{mean}");
    }
}
