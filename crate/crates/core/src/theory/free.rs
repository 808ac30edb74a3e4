//! Normalized-trace statistics and the closed-form predictions of the
//! early-time centered alignment, plus a Monte-Carlo oracle that emulates
//! free independence by random conjugation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::complex::{random_unitary, CMatrix};
use crate::linalg::random_orthogonal;
use crate::network::{Activation, Mlp, MlpConfig};
use crate::{Error, Matrix, Result, Rng, Scalar};

/// Traces of `A = (X^T Y X)^2`, `B = X^T X` and their centered versions
/// `Abar = A - tr[A] I`, all normalized by the input dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub t_a: f64,
    pub t_b: f64,
    pub t_a2: f64,
    pub t_abar2: f64,
    pub t_bbar2: f64,
    pub t_abar_bbar: f64,
    pub t_abar2_bbar: f64,
    pub t_abar_bbar2: f64,
    pub t_abar_bbar_sq: f64,
}

/// The label-weighted input Gram `X^T diag(y) X`.
pub fn label_gram<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<Matrix<T>> {
    x.scale_rows(y)?.matmul_tn(x)
}

/// `(A, B)` for the data.
pub fn data_matrices<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    let c = label_gram(x, y)?;
    Ok((&c * &c, x.gram()))
}

impl DataStats {
    pub fn new<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<Self> {
        let (a, b) = data_matrices(x, y)?;
        Self::from_matrices(&a, &b)
    }

    pub fn from_matrices<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Self> {
        let d = a.rows();
        if !a.is_square() || b.shape() != a.shape() {
            return Err(Error::shape("data_stats", format!("A {:?}, B {:?}", a.shape(), b.shape())));
        }
        let a = a.cast::<f64>();
        let b = b.cast::<f64>();
        let nt = |m: &Matrix<f64>, n: &Matrix<f64>| m.frob_inner(&n.transpose()).expect("square") / d as f64;
        let t_a = a.ntrace()?;
        let t_b = b.ntrace()?;
        let abar = a.shift_diag(-t_a)?;
        let bbar = b.shift_diag(-t_b)?;
        let ab = &abar * &bbar;
        Ok(DataStats {
            t_a,
            t_b,
            t_a2: nt(&a, &a),
            t_abar2: nt(&abar, &abar),
            t_bbar2: nt(&bbar, &bbar),
            t_abar_bbar: nt(&abar, &bbar),
            t_abar2_bbar: nt(&(&abar * &abar), &bbar),
            t_abar_bbar2: nt(&abar, &(&bbar * &bbar)),
            t_abar_bbar_sq: nt(&ab, &ab),
        })
    }
}

/// Normalized trace moments of `R = W^T diag(a^2) W`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RStats {
    pub t_r: f64,
    pub t_r2: f64,
    pub t_r3: f64,
    pub t_r4: f64,
    pub seeds: usize,
}

impl RStats {
    pub fn from_matrix<T: Scalar>(r: &Matrix<T>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::shape("r_stats", format!("{:?} is not square", r.shape())));
        }
        let r = r.cast::<f64>();
        let d = r.rows() as f64;
        let r2 = &r * &r;
        Ok(RStats {
            t_r: r.ntrace()?,
            t_r2: r.frob_inner(&r)? / d,
            t_r3: r2.frob_inner(&r)? / d,
            t_r4: r2.frob_inner(&r2)? / d,
            seeds: 1,
        })
    }

    pub fn average(all: &[RStats]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::Invalid("no R statistics to average".into()));
        }
        let n = all.len() as f64;
        let sum = |f: fn(&RStats) -> f64| all.iter().map(f).sum::<f64>() / n;
        Ok(RStats {
            t_r: sum(|s| s.t_r),
            t_r2: sum(|s| s.t_r2),
            t_r3: sum(|s| s.t_r3),
            t_r4: sum(|s| s.t_r4),
            seeds: all.iter().map(|s| s.seeds).sum(),
        })
    }
}

/// One-hidden-layer quadratic net in the theory convention: first-layer
/// entries with variance `1/k`, readout entries with variance 1.
pub fn quadratic_theory_config(d: usize, k: usize, seed: u64) -> MlpConfig {
    MlpConfig {
        widths: vec![d, k, 1],
        activation: Activation::Quadratic,
        init_scales: vec![d as f64 / k as f64, k as f64],
        seed,
    }
}

/// `R = W^T diag(a^2) W` from a one-hidden-layer net with readout `a`.
pub fn quadratic_r<T: Scalar>(net: &Mlp<T>) -> Result<Matrix<T>> {
    if net.depth() != 2 {
        return Err(Error::Invalid(format!("expected one hidden layer, got depth {}", net.depth())));
    }
    let w = &net.weights()[0];
    let a2: Vec<T> = net.weights()[1].row(0).iter().map(|&v| v * v).collect();
    w.scale_rows(&a2)?.matmul_tn(w)
}

/// R moments averaged over `n_seeds` fresh theory nets.
pub fn r_stats(d: usize, k: usize, n_seeds: usize, seed: u64) -> Result<RStats> {
    let all: Vec<RStats> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(seed, i as u64);
            let net = Mlp::<f64>::init_with(&quadratic_theory_config(d, k, seed), &mut rng)?;
            RStats::from_matrix(&quadratic_r(&net)?)
        })
        .collect::<Result<_>>()?;
    RStats::average(&all)
}

/// Which final term the second denominator uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denom2Variant {
    /// `tr[Abar^2] tr[B]^2 tr[R^2]^2`.
    #[default]
    Symmetric,
    /// `tr[Abar]^2 tr[B^2] tr[R^2]^2`, which vanishes since `tr[Abar] = 0`.
    AsPrinted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub numerator: f64,
    pub denom1: f64,
    pub denom2: f64,
    pub correlation: Option<f64>,
}

/// Free-probability value of `tr[ARARBR]`.
pub fn predicted_numerator(ds: &DataStats, rs: &RStats) -> f64 {
    let (ta, tb) = (ds.t_a, ds.t_b);
    let (r1, r2, r3) = (rs.t_r, rs.t_r2, rs.t_r3);
    ta * ta * tb * r3 + 2.0 * ta * r2 * r1 * ds.t_abar_bbar + tb * r1 * r2 * ds.t_abar2 + r1.powi(3) * ds.t_abar2_bbar
}

/// Free-probability value of `tr[ARAR]`.
pub fn predicted_denom1(ds: &DataStats, rs: &RStats) -> f64 {
    let (r1, r2) = (rs.t_r, rs.t_r2);
    ds.t_a2 * r1 * r1 + ds.t_a * ds.t_a * r2 - ds.t_a * ds.t_a * r1 * r1
}

/// Free-probability value of `tr[ARBRARBR]`.
pub fn predicted_denom2(ds: &DataStats, rs: &RStats, variant: Denom2Variant) -> f64 {
    let (ta, tb) = (ds.t_a, ds.t_b);
    let (r1, r2, r3, r4) = (rs.t_r, rs.t_r2, rs.t_r3, rs.t_r4);
    let common = r1.powi(4) * ds.t_abar_bbar_sq
        + 2.0 * r1 * r1 * (r2 - r1 * r1) * ds.t_abar_bbar.powi(2)
        + 2.0 * r1 * r1 * r2 * (tb * ds.t_abar2_bbar + ta * ds.t_abar_bbar2)
        + 4.0 * ta * tb * r3 * r1 * ds.t_abar_bbar
        + ta * ta * tb * tb * r4
        + ta * ta * ds.t_bbar2 * r2 * r2;
    let last = match variant {
        Denom2Variant::Symmetric => ds.t_abar2 * tb * tb * r2 * r2,
        // tr[Abar] is identically zero.
        Denom2Variant::AsPrinted => 0.0,
    };
    common + last
}

pub fn predicted_correlation(ds: &DataStats, rs: &RStats, variant: Denom2Variant) -> Prediction {
    let numerator = predicted_numerator(ds, rs);
    let denom1 = predicted_denom1(ds, rs);
    let denom2 = predicted_denom2(ds, rs, variant);
    let correlation = (denom1 > 0.0 && denom2 > 0.0).then(|| numerator / (denom1 * denom2).sqrt());
    Prediction { numerator, denom1, denom2, correlation }
}

/// How the oracle draws the random rotation applied to `R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conjugation {
    Orthogonal,
    /// Haar unitary; its finite-size bias is O(1/d^2) instead of O(1/d).
    #[default]
    Unitary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { f64::NAN };
        McEstimate { mean, stderr: (var / n).sqrt(), samples: v.len() }
    }

    /// `(value - mean) / stderr`.
    pub fn z_score(&self, value: f64) -> f64 {
        (value - self.mean) / self.stderr
    }
}

/// Letters of a trace word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Letter {
    A,
    B,
    ABar,
    BBar,
    /// Power of the rotated `R`.
    R(u32),
}

fn rotated<T: Scalar>(rng: &mut Rng, r: &Matrix<T>, conj: Conjugation) -> CMatrix<T> {
    match conj {
        Conjugation::Orthogonal => {
            let o = random_orthogonal::<T>(rng, r.rows());
            CMatrix::real(o.matmul(r).expect("square").matmul_nt(&o).expect("square"))
        }
        Conjugation::Unitary => {
            let u = random_unitary::<T>(rng, r.rows());
            u.mul(&CMatrix::real(r.clone())).mul_adjoint(&u)
        }
    }
}

fn check_trio<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, r: &Matrix<T>) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() || a.shape() != r.shape() {
        return Err(Error::shape("free_word_oracle", format!("A {:?}, B {:?}, R {:?}", a.shape(), b.shape(), r.shape())));
    }
    Ok(())
}

/// Monte-Carlo estimate of the normalized trace of `word`, with `R` replaced
/// by an independent random rotation of itself in every sample.
pub fn free_word_oracle<T: Scalar>(
    rng: &mut Rng,
    a: &Matrix<T>,
    b: &Matrix<T>,
    r: &Matrix<T>,
    word: &[Letter],
    n_mc: usize,
    conj: Conjugation,
) -> Result<McEstimate> {
    check_trio(a, b, r)?;
    if word.is_empty() || n_mc < 2 {
        return Err(Error::Invalid("need a nonempty word and at least two samples".into()));
    }
    let d = a.rows();
    let abar = a.shift_diag(-a.ntrace()?)?;
    let bbar = b.shift_diag(-b.ntrace()?)?;
    let base = rng.next_u64();
    let samples: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(base, i as u64);
            let rr = rotated(&mut rng, r, conj);
            let mut acc = CMatrix::real(Matrix::<T>::identity(d));
            for letter in word {
                acc = match *letter {
                    Letter::A => CMatrix { re: &acc.re * a, im: acc.im.as_ref().map(|m| m * a) },
                    Letter::B => CMatrix { re: &acc.re * b, im: acc.im.as_ref().map(|m| m * b) },
                    Letter::ABar => CMatrix { re: &acc.re * &abar, im: acc.im.as_ref().map(|m| m * &abar) },
                    Letter::BBar => CMatrix { re: &acc.re * &bbar, im: acc.im.as_ref().map(|m| m * &bbar) },
                    Letter::R(p) => (0..p).fold(acc, |m, _| m.mul(&rr)),
                };
            }
            acc.re.ntrace().expect("square").to_f64_lossy()
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Joint estimates of `tr[ARARBR]`, `tr[ARAR]` and `tr[ARBRARBR]` sharing
/// each rotation across the three words.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrioEstimate {
    pub numerator: McEstimate,
    pub denom1: McEstimate,
    pub denom2: McEstimate,
}

pub fn free_trio_oracle<T: Scalar>(
    rng: &mut Rng,
    a: &Matrix<T>,
    b: &Matrix<T>,
    r: &Matrix<T>,
    n_mc: usize,
    conj: Conjugation,
) -> Result<TrioEstimate> {
    check_trio(a, b, r)?;
    if n_mc < 2 {
        return Err(Error::Invalid("need at least two samples".into()));
    }
    let d = a.rows() as f64;
    let base = rng.next_u64();
    let samples: Vec<[f64; 3]> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(base, i as u64);
            let rr = rotated(&mut rng, r, conj);
            let ar = rr.left_real(a);
            let br = rr.left_real(b);
            let arar = ar.mul(&ar);
            let arbr = ar.mul(&br);
            [
                arar.trace_product_re(&br).to_f64_lossy() / d,
                ar.trace_product_re(&ar).to_f64_lossy() / d,
                arbr.trace_product_re(&arbr).to_f64_lossy() / d,
            ]
        })
        .collect();
    let col = |k: usize| McEstimate::from_samples(&samples.iter().map(|s| s[k]).collect::<Vec<_>>());
    Ok(TrioEstimate { numerator: col(0), denom1: col(1), denom2: col(2) })
}
