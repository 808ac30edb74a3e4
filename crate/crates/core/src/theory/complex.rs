//! Minimal complex matrices stored as real/imaginary pairs, enough for
//! unitary conjugation and traces of products.

use crate::linalg::dot;
use crate::{Matrix, Rng, Scalar};

#[derive(Clone, Debug)]
pub struct CMatrix<T> {
    pub re: Matrix<T>,
    /// `None` for purely real matrices.
    pub im: Option<Matrix<T>>,
}

impl<T: Scalar> CMatrix<T> {
    pub fn real(re: Matrix<T>) -> Self {
        CMatrix { re, im: None }
    }

    pub fn dim(&self) -> usize {
        self.re.rows()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let re_re = &self.re * &other.re;
        match (&self.im, &other.im) {
            (None, None) => CMatrix::real(re_re),
            (Some(ai), None) => CMatrix { re: re_re, im: Some(ai * &other.re) },
            (None, Some(bi)) => CMatrix { re: re_re, im: Some(&self.re * bi) },
            (Some(ai), Some(bi)) => {
                let re = re_re.sub(&(ai * bi)).expect("same shape");
                let im = (&self.re * bi).add(&(ai * &other.re)).expect("same shape");
                CMatrix { re, im: Some(im) }
            }
        }
    }

    /// `a * self` for real `a`.
    pub fn left_real(&self, a: &Matrix<T>) -> Self {
        CMatrix { re: a * &self.re, im: self.im.as_ref().map(|i| a * i) }
    }

    /// `self * b^H`.
    pub fn mul_adjoint(&self, b: &Self) -> Self {
        let re_re = self.re.matmul_nt(&b.re).expect("square");
        match (&self.im, &b.im) {
            (None, None) => CMatrix::real(re_re),
            (Some(ai), None) => CMatrix { re: re_re, im: Some(ai.matmul_nt(&b.re).expect("square")) },
            (None, Some(bi)) => CMatrix { re: re_re, im: Some(self.re.matmul_nt(bi).expect("square").scale(-T::one())) },
            (Some(ai), Some(bi)) => {
                // (ar + i ai)(br^T - i bi^T)
                let re = re_re.add(&ai.matmul_nt(bi).expect("square")).expect("same shape");
                let im = ai.matmul_nt(&b.re).expect("square").sub(&self.re.matmul_nt(bi).expect("square")).expect("same shape");
                CMatrix { re, im: Some(im) }
            }
        }
    }

    /// Real part of `tr(self * other)`.
    pub fn trace_product_re(&self, other: &Self) -> T {
        let n = self.dim();
        let mut acc = T::zero();
        let ot = other.re.transpose();
        for i in 0..n {
            acc += dot(self.re.row(i), ot.row(i));
        }
        if let (Some(ai), Some(bi)) = (&self.im, &other.im) {
            let bt = bi.transpose();
            for i in 0..n {
                acc -= dot(ai.row(i), bt.row(i));
            }
        }
        acc
    }
}

/// Haar unitary from two-pass Gram-Schmidt over the rows of a complex
/// Gaussian matrix (positive triangular factor).
pub fn random_unitary<T: Scalar>(rng: &mut Rng, n: usize) -> CMatrix<T> {
    let mut re = crate::linalg::random_gaussian::<T>(rng, n, n, 1.0);
    let mut im = crate::linalg::random_gaussian::<T>(rng, n, n, 1.0);
    for j in 0..n {
        let (re_done, re_rest) = re.as_mut_slice().split_at_mut(j * n);
        let (im_done, im_rest) = im.as_mut_slice().split_at_mut(j * n);
        let vr = &mut re_rest[..n];
        let vi = &mut im_rest[..n];
        for _ in 0..2 {
            for i in 0..j {
                let qr = &re_done[i * n..(i + 1) * n];
                let qi = &im_done[i * n..(i + 1) * n];
                // c = <q_i, v> = sum conj(q_i) v
                let cr = dot(qr, vr) + dot(qi, vi);
                let ci = dot(qr, vi) - dot(qi, vr);
                for k in 0..n {
                    vr[k] -= cr * qr[k] - ci * qi[k];
                    vi[k] -= cr * qi[k] + ci * qr[k];
                }
            }
        }
        let inv = T::one() / (dot(vr, vr) + dot(vi, vi)).sqrt();
        vr.iter_mut().for_each(|v| *v *= inv);
        vi.iter_mut().for_each(|v| *v *= inv);
    }
    CMatrix { re, im: Some(im) }
}
