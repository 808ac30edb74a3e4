//! Synthetic data generators and dataset CSV io.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::linalg::{pinv_singular_values, random_gaussian, random_orthogonal, svd, sym_eig, PINV_THRESHOLD};
use crate::{Error, Matrix, Result, Rng, Scalar};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub meta: DatasetMeta,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>, meta: DatasetMeta) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Invalid("dataset needs at least one sample".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::shape("dataset", format!("{} inputs but {} labels", x.rows(), y.len())));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("dataset has non-finite entries".into()));
        }
        Ok(Dataset { x, y, meta })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Population standard deviation (no mean subtraction in the scaling).
pub fn population_std<T: Scalar>(v: &[T]) -> T {
    let n = T::of(v.len().max(1) as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    (v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n).sqrt()
}

/// Divides labels by their population standard deviation; returns that std.
pub fn standardize<T: Scalar>(y: &mut [T]) -> Result<T> {
    let s = population_std(y);
    if s == T::zero() {
        return Err(Error::Invalid("constant labels cannot be standardized".into()));
    }
    y.iter_mut().for_each(|v| *v /= s);
    Ok(s)
}

/// Sum of `x_i x_{i+1 mod r}` over `i < r`.
pub fn chain_monomial_label<T: Scalar>(x: &[T], r: usize) -> T {
    (0..r).map(|i| x[i] * x[(i + 1) % r]).sum()
}

fn check_chain(d: usize, r: usize) -> Result<()> {
    if r < 3 || r > d {
        return Err(Error::Invalid(format!("chain monomial needs 3 <= r <= d, got r={r}, d={d}")));
    }
    Ok(())
}

/// Chain-monomial labels on given inputs, standardized.
pub fn chain_monomial_on<T: Scalar>(x: Matrix<T>, r: usize, mut meta: DatasetMeta) -> Result<Dataset<T>> {
    check_chain(x.cols(), r)?;
    let mut y: Vec<T> = (0..x.rows()).map(|a| chain_monomial_label(x.row(a), r)).collect();
    let raw_std = standardize(&mut y)?;
    if let serde_json::Value::Object(m) = &mut meta.params {
        m.insert("r".into(), json!(r));
        m.insert("raw_label_std".into(), json!(raw_std.to_f64_lossy()));
    }
    Dataset::new(x, y, meta)
}

/// Standard Gaussian inputs with chain-monomial labels.
pub fn chain_monomial<T: Scalar>(rng: &mut Rng, n: usize, d: usize, r: usize) -> Result<Dataset<T>> {
    check_chain(d, r)?;
    if n == 0 {
        return Err(Error::Invalid("n must be >= 1".into()));
    }
    let meta = DatasetMeta {
        generator: "chain_monomial".into(),
        seed: Some(rng.seed()),
        params: json!({"n": n, "d": d}),
    };
    chain_monomial_on(random_gaussian(rng, n, d, 1.0), r, meta)
}

/// Analytic gradient outer product of the unstandardized chain target under
/// standard Gaussian inputs. Entry (i, j) for i, j < r is `2 [i = j]` plus
/// the number of signs s in {+2, -2} with `j = i + s (mod r)`.
pub fn chain_monomial_egop<T: Scalar>(d: usize, r: usize) -> Result<Matrix<T>> {
    check_chain(d, r)?;
    Ok(Matrix::from_fn(d, d, |i, j| {
        if i >= r || j >= r {
            return T::zero();
        }
        let mut v = if i == j { 2.0 } else { 0.0 };
        for s in [2, r - 2] {
            if (i + s) % r == j {
                v += 1.0;
            }
        }
        T::of(v)
    }))
}

/// Eigenvalues `1 / (1 + k^alpha)` for `k = 1..=d`.
pub fn decay_spectrum(d: usize, alpha: f64) -> Vec<f64> {
    (1..=d).map(|k| 1.0 / (1.0 + (k as f64).powf(alpha))).collect()
}

/// Covariance with the decaying spectrum in a random eigenbasis.
pub fn decay_covariance<T: Scalar>(rng: &mut Rng, d: usize, alpha: f64) -> Result<Matrix<T>> {
    let (q, lam) = decay_basis::<T>(rng, d, alpha)?;
    q.scale_cols(&lam)?.matmul_nt(&q)
}

fn decay_basis<T: Scalar>(rng: &mut Rng, d: usize, alpha: f64) -> Result<(Matrix<T>, Vec<T>)> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let q = random_orthogonal::<T>(rng, d);
    let lam = decay_spectrum(d, alpha).into_iter().map(T::of).collect();
    Ok((q, lam))
}

/// Gaussian rows with covariance `Q diag(1/(1+k^alpha)) Q^T`.
pub fn gaussian_decay<T: Scalar>(rng: &mut Rng, n: usize, d: usize, alpha: f64) -> Result<Matrix<T>> {
    let (q, lam) = decay_basis::<T>(rng, d, alpha)?;
    let root: Vec<T> = lam.iter().map(|l| l.sqrt()).collect();
    let g = random_gaussian::<T>(rng, n, d, 1.0);
    g.scale_cols(&root)?.matmul_nt(&q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceParams {
    pub gamma: f64,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "default_label_shift")]
    pub label_shift: f64,
}

fn default_eps1() -> f64 {
    0.5
}
fn default_eps2() -> f64 {
    1e-2
}
fn default_label_shift() -> f64 {
    1e-5
}

impl BalanceParams {
    pub fn with_gamma(gamma: f64) -> Self {
        BalanceParams { gamma, eps1: default_eps1(), eps2: default_eps2(), label_shift: default_label_shift() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(Error::Invalid("eps1 and eps2 must be positive".into()));
        }
        Ok(())
    }
}

/// The two blocks of the alignment-reversing construction before noise.
#[derive(Clone, Debug)]
pub struct BalanceParts<T> {
    pub x1: Matrix<T>,
    pub x2: Matrix<T>,
}

fn spiked_rows<T: Scalar>(rng: &mut Rng, rows: usize, d: usize, eps1: f64) -> Matrix<T> {
    // Covariance 11^T + eps1 I: a shared scalar per row plus isotropic noise.
    let mut x = random_gaussian::<T>(rng, rows, d, eps1.sqrt());
    for i in 0..rows {
        let s = T::of(rng.normal());
        x.row_mut(i).iter_mut().for_each(|v| *v += s);
    }
    x
}

/// Builds `X1` (spiked Gaussian, `ceil(gamma n)` rows) and `X2` whose Gram
/// matrix is the squared pseudo-inverse of `X1^T X1` restricted to the
/// leading `min(n2, d)` directions.
pub fn alignment_reversing_parts<T: Scalar>(rng: &mut Rng, n: usize, d: usize, params: &BalanceParams) -> Result<BalanceParts<T>> {
    params.validate()?;
    if n == 0 || d == 0 {
        return Err(Error::Invalid("n and d must be positive".into()));
    }
    let n1 = ((params.gamma * n as f64).ceil() as usize).clamp(1, n);
    let n2 = n - n1;
    let x1 = spiked_rows::<T>(rng, n1, d, params.eps1);
    if n2 == 0 {
        return Ok(BalanceParts { x1, x2: Matrix::zeros(0, d) });
    }
    // X1^T X1 is PSD, so its eigendecomposition is its SVD.
    let e = sym_eig(&x1.gram())?;
    let s1: Vec<T> = e.values.iter().map(|&v| v.max(T::zero())).collect();
    let inv = pinv_singular_values(&s1, T::of(PINV_THRESHOLD));
    let fresh = spiked_rows::<T>(rng, n2, d, params.eps1);
    let v2 = svd(&fresh)?.u;
    let r = n2.min(d);
    let scaled = v2.take_cols(r).scale_cols(&inv[..r])?;
    let x2 = scaled.matmul_nt(&e.vectors.take_cols(r))?;
    Ok(BalanceParts { x1, x2 })
}

/// Alignment-reversing dataset: labels `1 + shift` on `X1`, `shift` on `X2`,
/// elementwise noise `eps2 N(0, 1)` on all inputs; labels are not standardized.
pub fn alignment_reversing<T: Scalar>(rng: &mut Rng, n: usize, d: usize, params: &BalanceParams) -> Result<Dataset<T>> {
    let seed = rng.seed();
    let parts = alignment_reversing_parts::<T>(rng, n, d, params)?;
    let noise = random_gaussian::<T>(rng, n, d, params.eps2);
    let x = Matrix::vstack(&[&parts.x1, &parts.x2])?.add(&noise)?;
    let shift = T::of(params.label_shift);
    let y = (0..n).map(|a| if a < parts.x1.rows() { T::one() + shift } else { shift }).collect();
    let meta = DatasetMeta {
        generator: "alignment_reversing".into(),
        seed: Some(seed),
        params: json!({
            "n": n, "d": d, "gamma": params.gamma, "eps1": params.eps1,
            "eps2": params.eps2, "label_shift": params.label_shift, "n1": parts.x1.rows(),
        }),
    };
    Dataset::new(x, y, meta)
}

/// `O diag(eig(K)) O^T` for a fresh Haar orthogonal `O`.
pub fn corrupt_spectrum<T: Scalar>(rng: &mut Rng, k: &Matrix<T>) -> Result<Matrix<T>> {
    let e = sym_eig(k)?;
    let o = random_orthogonal::<T>(rng, k.rows());
    Ok(o.scale_cols(&e.values)?.matmul_nt(&o)?.symmetrize())
}

/// Seeded shuffle, then the first `n_test` rows become the test split.
pub fn shuffle_split<T: Scalar>(rng: &mut Rng, data: &Dataset<T>, n_test: usize) -> Result<(Dataset<T>, Dataset<T>)> {
    if n_test >= data.n() {
        return Err(Error::Invalid(format!("test split {n_test} leaves no training rows out of {}", data.n())));
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    rng.shuffle(&mut idx);
    let (test, train) = idx.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Rows of inputs followed by the label; metadata goes to `<path>.json`.
pub fn save_csv<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let joined = Matrix::from_fn(data.n(), data.d() + 1, |i, j| if j < data.d() { data.x[(i, j)] } else { data.y[i] });
    crate::linalg::write_matrix_csv(&joined, path)?;
    let side = sidecar(path);
    let f = File::create(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &data.meta).map_err(|e| Error::io(&side, e.into()))?;
    Ok(())
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let m = crate::linalg::read_matrix_csv::<T>(path)?;
    if m.cols() < 2 {
        return Err(Error::Parse { path: path.to_path_buf(), line: 1, msg: "need at least one input column and a label".into() });
    }
    let d = m.cols() - 1;
    let x = Matrix::from_fn(m.rows(), d, |i, j| m[(i, j)]);
    let y = m.column(d);
    let side = sidecar(path);
    let meta = match std::fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: side.clone(), line: e.line() as u64, msg: e.to_string() })?,
        Err(_) => DatasetMeta { generator: "csv".into(), seed: None, params: json!({"path": path}) },
    };
    Dataset::new(x, y, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_label_hand_cases() {
        assert_eq!(chain_monomial_label(&[0.0; 6], 5), 0.0);
        assert_eq!(chain_monomial_label(&[1.0, 1.0, 1.0, 1.0, 1.0, 7.0], 5), 5.0);
        assert_eq!(chain_monomial_label(&[1.0, 0.0, 0.0, 0.0, 0.0], 5), 0.0);
        // 0-based cycle includes the wrap-around pair (4, 0).
        assert_eq!(chain_monomial_label(&[2.0, 0.0, 0.0, 0.0, 3.0], 5), 6.0);
    }

    #[test]
    fn chain_rejects_bad_r() {
        let mut rng = Rng::new(0);
        assert!(chain_monomial::<f64>(&mut rng, 10, 4, 5).is_err());
        assert!(chain_monomial::<f64>(&mut rng, 10, 4, 2).is_err());
        assert!(chain_monomial_egop::<f64>(4, 5).is_err());
    }

    #[test]
    fn chain_is_standardized_and_deterministic() {
        let a = chain_monomial::<f64>(&mut Rng::new(3), 200, 8, 5).unwrap();
        let b = chain_monomial::<f64>(&mut Rng::new(3), 200, 8, 5).unwrap();
        assert!((population_std(&a.y) - 1.0).abs() < 1e-12);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn egop_structure() {
        let e = chain_monomial_egop::<f64>(8, 5).unwrap();
        assert_eq!(e.diag(), vec![2.0, 2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
        // Offsets +-2 mod 5: (0,2), (0,3), (1,3), (1,4), (2,4).
        for (i, j) in [(0, 2), (0, 3), (1, 3), (1, 4), (2, 4)] {
            assert_eq!(e[(i, j)], 1.0);
            assert_eq!(e[(j, i)], 1.0);
        }
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e.sum(), 10.0 + 10.0);
        // r = 4: +2 and -2 land on the same partner.
        assert_eq!(chain_monomial_egop::<f64>(4, 4).unwrap()[(0, 2)], 2.0);
    }

    #[test]
    fn egop_full_rank_when_d_equals_r() {
        let e = sym_eig(&chain_monomial_egop::<f64>(5, 5).unwrap()).unwrap();
        assert!(e.values.iter().all(|&v| v > 1e-8));
    }

    #[test]
    fn decay_zero_alpha_is_half_identity() {
        let s = decay_covariance::<f64>(&mut Rng::new(1), 6, 0.0).unwrap();
        assert!(s.sub(&Matrix::scalar(6, 0.5)).unwrap().max_abs() < 1e-14);
        let lam = decay_spectrum(3, 2.0);
        assert_eq!(lam, vec![0.5, 0.2, 0.1]);
    }

    #[test]
    fn decay_rejects_negative_alpha() {
        assert!(gaussian_decay::<f64>(&mut Rng::new(1), 4, 3, -1.0).is_err());
    }

    #[test]
    fn balance_gamma_one_has_no_second_block() {
        let d = alignment_reversing::<f64>(&mut Rng::new(2), 20, 5, &BalanceParams::with_gamma(1.0)).unwrap();
        assert!(d.y.iter().all(|&v| v == 1.0 + 1e-5));
    }

    #[test]
    fn balance_labels_two_values() {
        let d = alignment_reversing::<f64>(&mut Rng::new(2), 40, 6, &BalanceParams::with_gamma(0.3)).unwrap();
        let ones = d.y.iter().filter(|&&v| v == 1.0 + 1e-5).count();
        let zeros = d.y.iter().filter(|&&v| v == 1e-5).count();
        assert_eq!(ones, 12);
        assert_eq!(ones + zeros, 40);
    }

    #[test]
    fn balance_rejects_bad_gamma() {
        assert!(alignment_reversing::<f64>(&mut Rng::new(2), 40, 6, &BalanceParams::with_gamma(0.0)).is_err());
        assert!(alignment_reversing::<f64>(&mut Rng::new(2), 40, 6, &BalanceParams::with_gamma(1.5)).is_err());
    }

    #[test]
    fn corrupt_isotropic_fixed_point() {
        let k = Matrix::<f64>::scalar(5, 2.5);
        let q = corrupt_spectrum(&mut Rng::new(3), &k).unwrap();
        assert!(q.sub(&k).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn split_partitions_rows() {
        let d = chain_monomial::<f64>(&mut Rng::new(3), 30, 6, 3).unwrap();
        let (tr, te) = shuffle_split(&mut Rng::new(9), &d, 10).unwrap();
        assert_eq!((tr.n(), te.n()), (20, 10));
        let mut all: Vec<u64> = tr.y.iter().chain(&te.y).map(|v| v.to_bits()).collect();
        let mut orig: Vec<u64> = d.y.iter().map(|v| v.to_bits()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn csv_round_trip_and_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let d = chain_monomial::<f64>(&mut Rng::new(3), 12, 4, 3).unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&d, &p).unwrap();
        let back = load_csv::<f64>(&p).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
        assert_eq!(back.meta, d.meta);

        let f = dir.path().join("hand.csv");
        std::fs::write(&f, "1,2,0.5\n3,4,1.5\n-1,0,2\n").unwrap();
        let h = load_csv::<f64>(&f).unwrap();
        assert_eq!(h.x, Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.0]]).unwrap());
        assert_eq!(h.y, vec![0.5, 1.5, 2.0]);

        let e = dir.path().join("empty.csv");
        std::fs::write(&e, "").unwrap();
        assert!(load_csv::<f64>(&e).is_err());
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1,2\n3,oops\n").unwrap();
        match load_csv::<f64>(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
