use super::matrix::{dot, Matrix};
use crate::{Error, Result, Scalar};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEig<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymEig<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let vl = self.vectors.scale_cols(&self.values).expect("eigen shapes");
        vl.matmul_nt(&self.vectors).expect("eigen shapes")
    }
}

/// Thin SVD: `u` is m x p, `s` has p entries, `v` is n x p with p = min(m, n).
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let us = self.u.scale_cols(&self.s).expect("svd shapes");
        us.matmul_nt(&self.v).expect("svd shapes")
    }

    /// Number of singular values above `tol * s_max`.
    pub fn rank(&self, tol: T) -> usize {
        let top = self.s.first().copied().unwrap_or(T::zero());
        self.s.iter().filter(|&&s| s > tol * top).count()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig<T: Scalar>(a: &Matrix<T>) -> Result<SymEig<T>> {
    if !a.is_square() {
        return Err(Error::shape("sym_eig", format!("{:?} is not square", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Invalid("sym_eig: non-finite entries".into()));
    }
    if a.asymmetry() > T::of(1e-10) {
        return Err(Error::Invalid(format!("sym_eig: asymmetric input (relative {:e})", a.asymmetry())));
    }
    let n = a.rows();
    let mut m = a.symmetrize();
    // Rows of `vt` are the eigenvectors, so rotations touch contiguous memory.
    let mut vt = Matrix::<T>::identity(n);
    let norm = m.frob_norm();
    let eps = T::epsilon();
    let tiny = T::min_positive_value();

    let mut converged = n <= 1 || norm == T::zero();
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::Convergence { what: "jacobi eigensolver", iterations: MAX_SWEEPS });
        }
        sweep += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                if apq.abs() <= tiny || apq.abs() <= eps * T::of(1e-2) * (app.abs() + aqq.abs()) {
                    if apq != T::zero() && sweep > 3 {
                        m[(p, q)] = T::zero();
                        m[(q, p)] = T::zero();
                    }
                    continue;
                }
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate_rows(&mut m, p, q, c, s);
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    if k != p && k != q {
                        m[(k, p)] = m[(p, k)];
                        m[(k, q)] = m[(q, k)];
                    }
                }
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        let mut off = T::zero();
        for i in 0..n {
            for j in 0..i {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        converged = (off + off).sqrt() <= eps * norm;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = vt.select_rows(&order).transpose();
    Ok(SymEig { values, vectors })
}

/// Rows p and q become `c*p - s*q` and `s*p + c*q`.
fn rotate_rows<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// SVD through the eigendecomposition of the smaller Gram matrix.
///
/// Right vectors are sign-fixed so their largest entry is positive; left
/// vectors are recovered as `A v / s` and re-orthonormalized, with null
/// directions completed from the standard basis.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::Invalid("svd: non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (m, n) = a.shape();
    let eig = sym_eig(&a.gram())?;
    let mut v = eig.vectors;
    for j in 0..n {
        let col = v.column(j);
        let lead = col.iter().copied().fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < T::zero() {
            for i in 0..n {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    // Norms of A v are far more accurate than square roots of Gram
    // eigenvalues for small singular values.
    let av = a.matmul(&v)?;
    let mut s: Vec<T> = (0..n).map(|j| (0..m).map(|i| av[(i, j)] * av[(i, j)]).sum::<T>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).expect("finite singular values"));
    if order.iter().enumerate().any(|(k, &o)| k != o) {
        s = order.iter().map(|&j| s[j]).collect();
        let vt = v.transpose().select_rows(&order);
        v = vt.transpose();
        let avt = av.transpose().select_rows(&order);
        return finish_svd(avt.transpose(), s, v, m, n);
    }
    finish_svd(av, s, v, m, n)
}

fn finish_svd<T: Scalar>(av: Matrix<T>, s: Vec<T>, v: Matrix<T>, m: usize, n: usize) -> Result<Svd<T>> {
    let smax = s.first().copied().unwrap_or(T::zero());
    let cutoff = smax * T::epsilon() * T::of((m.max(n)) as f64);
    // Columns of u are stored as rows of `ut` during orthonormalization.
    let mut ut = Matrix::<T>::zeros(n, m);
    let mut filled = vec![false; n];
    for j in 0..n {
        if s[j] > cutoff {
            let inv = T::one() / s[j];
            for i in 0..m {
                ut[(j, i)] = av[(i, j)] * inv;
            }
            filled[j] = true;
        }
    }
    orthonormalize_rows(&mut ut, &filled);
    Ok(Svd { u: ut.transpose(), s, v })
}

/// Two-pass Gram-Schmidt over the rows in order; rows flagged `false` (or
/// collapsing to zero) are replaced by the standard basis vector with the
/// largest residual.
fn orthonormalize_rows<T: Scalar>(q: &mut Matrix<T>, filled: &[bool]) {
    let (r, m) = q.shape();
    for j in 0..r {
        let mut ok = filled[j];
        if ok {
            ok = project_out(q, j) > T::of(1e-6);
        }
        if !ok {
            let mut best = (T::zero(), 0);
            for e in 0..m {
                let mut res = T::one();
                for i in 0..j {
                    res -= q[(i, e)] * q[(i, e)];
                }
                if res > best.0 {
                    best = (res, e);
                }
            }
            q.row_mut(j).iter_mut().for_each(|x| *x = T::zero());
            q[(j, best.1)] = T::one();
            project_out(q, j);
        }
    }
}

/// Removes the components of row j along rows 0..j (twice) and normalizes it.
/// Returns the ratio of the final norm to the starting norm.
fn project_out<T: Scalar>(q: &mut Matrix<T>, j: usize) -> T {
    let start = dot(q.row(j), q.row(j)).sqrt();
    if start == T::zero() {
        return T::zero();
    }
    let cols = q.cols();
    for _ in 0..2 {
        let (done, rest) = q.as_mut_slice().split_at_mut(j * cols);
        let row = &mut rest[..cols];
        for i in 0..j {
            let qi = &done[i * cols..(i + 1) * cols];
            let c = dot(qi, row);
            for (x, &y) in row.iter_mut().zip(qi) {
                *x -= c * y;
            }
        }
    }
    let norm = dot(q.row(j), q.row(j)).sqrt();
    if norm > T::zero() {
        let inv = T::one() / norm;
        q.row_mut(j).iter_mut().for_each(|x| *x *= inv);
    }
    norm / start
}

/// Reciprocals of singular values above `threshold * s[0]`, zero otherwise.
pub fn pinv_singular_values<T: Scalar>(s: &[T], threshold: T) -> Vec<T> {
    let top = s.first().copied().unwrap_or(T::zero());
    s.iter()
        .map(|&v| if v > threshold * top && v > T::zero() { T::one() / v } else { T::zero() })
        .collect()
}

/// Householder QR of an m x n matrix (m >= n): thin `q` (m x n) and upper
/// triangular `r` (n x n) with a nonnegative diagonal.
pub fn qr<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::shape("qr", format!("{m}x{n} has more columns than rows")));
    }
    // Work on columns as contiguous rows.
    let mut cols = a.transpose();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(n);
    for j in 0..n {
        let x = &cols.row(j)[j..];
        let alpha = dot(x, x).sqrt();
        let mut v = x.to_vec();
        if alpha == T::zero() {
            reflectors.push(vec![T::zero(); m - j]);
            continue;
        }
        let sign = if v[0] >= T::zero() { T::one() } else { -T::one() };
        v[0] += sign * alpha;
        let vn = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|e| *e /= vn);
        for k in j..n {
            let ck = &mut cols.row_mut(k)[j..];
            let proj = T::of(2.0) * dot(&v, ck);
            for (c, &vi) in ck.iter_mut().zip(&v) {
                *c -= proj * vi;
            }
        }
        reflectors.push(v);
    }
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r[(i, j)] = cols[(j, i)];
        }
    }
    // Apply the reflectors in reverse to the leading identity columns.
    let mut qt = Matrix::<T>::zeros(n, m);
    for j in 0..n {
        qt[(j, j)] = T::one();
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        for k in 0..n {
            let qk = &mut qt.row_mut(k)[j..];
            let proj = T::of(2.0) * dot(v, qk);
            for (c, &vi) in qk.iter_mut().zip(v) {
                *c -= proj * vi;
            }
        }
    }
    for j in 0..n {
        if r[(j, j)] < T::zero() {
            qt.row_mut(j).iter_mut().for_each(|x| *x = -*x);
            for k in j..n {
                r[(j, k)] = -r[(j, k)];
            }
        }
    }
    Ok((qt.transpose(), r))
}
