//! Trace correlations between weight Gram matrices and gradient outer products.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::network::{feature_cov, layer_preact_grads, Mlp};
use crate::{Error, Matrix, Result, Scalar};

fn norm_floor<T: Scalar>() -> T {
    T::of(1e-300).max(T::min_positive_value())
}

/// `tr(A^T B) / sqrt(tr(A^T A) tr(B^T B))`; `None` when either side is zero.
pub fn rho<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Option<T>> {
    let ab = a.frob_inner(b)?;
    let na = a.frob_norm();
    let nb = b.frob_norm();
    if na < norm_floor() || nb < norm_floor() {
        return Ok(None);
    }
    Ok(Some(ab / na / nb))
}

/// `rho` after subtracting each matrix's mean entry; `None` for constant inputs.
pub fn pearson_rho<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Option<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("pearson_rho", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let ca = center(a);
    let cb = center(b);
    let slack = T::of(64.0) * T::epsilon();
    if ca.frob_norm() <= slack * a.frob_norm() || cb.frob_norm() <= slack * b.frob_norm() {
        return Ok(None);
    }
    rho(&ca, &cb)
}

fn center<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let m = a.mean();
    a.map(|v| v - m)
}

pub fn egop_similarity<T: Scalar>(m: &Matrix<T>, egop: &Matrix<T>) -> Result<Option<T>> {
    rho(m, egop)
}

/// Standard deviation of the eigenvalues over their mean.
pub fn eigen_dispersion<T: Scalar>(k: &Matrix<T>) -> Result<T> {
    let e = crate::linalg::sym_eig(k)?;
    let n = T::of(e.values.len() as f64);
    let mean = e.values.iter().copied().sum::<T>() / n;
    let var = e.values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    Ok(var.sqrt() / mean)
}

fn fingerprint<T: Scalar>(x: &Matrix<T>) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_usize(x.rows());
    h.write_usize(x.cols());
    for v in x.as_slice() {
        h.write_u64(v.to_f64_lossy().to_bits());
    }
    h.finish()
}

/// Initial weights and initial output gradients on the measurement set.
#[derive(Clone, Debug)]
pub struct ReferenceState<T> {
    weights: Vec<Matrix<T>>,
    preact_grads: Vec<Matrix<T>>,
    measurement: u64,
}

impl<T: Scalar> ReferenceState<T> {
    pub fn capture(net: &Mlp<T>, x: &Matrix<T>) -> Result<Self> {
        let cache = net.forward(x)?;
        let preact_grads = net.preact_grads(&cache)?;
        Ok(ReferenceState { weights: net.weights().to_vec(), preact_grads, measurement: fingerprint(x) })
    }

    /// Reference with given initial weights and no kernel centering data.
    pub fn from_weights(weights: Vec<Matrix<T>>, preact_grads: Vec<Matrix<T>>, x: &Matrix<T>) -> Self {
        ReferenceState { weights, preact_grads, measurement: fingerprint(x) }
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn preact_grads(&self) -> &[Matrix<T>] {
        &self.preact_grads
    }

    fn check(&self, x: &Matrix<T>, layer: usize) -> Result<()> {
        if layer >= self.weights.len() {
            return Err(Error::Invalid(format!("reference has no layer {layer}")));
        }
        if fingerprint(x) != self.measurement {
            return Err(Error::Invalid("measurement set differs from the one captured in the reference".into()));
        }
        Ok(())
    }
}

/// Every alignment statistic for one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub uc_nfa: Option<f64>,
    pub c_nfa: Option<f64>,
    pub dc_nfa: Option<f64>,
    pub ptk_c_nfa: Option<f64>,
    pub c_uc_ratio: Option<f64>,
    pub dc_ratio: Option<f64>,
}

fn ratio<T: Scalar>(num: T, den: T) -> Option<f64> {
    if den.abs() < norm_floor() {
        None
    } else {
        Some((num / den).to_f64_lossy())
    }
}

fn lossy<T: Scalar>(v: Option<T>) -> Option<f64> {
    v.map(Scalar::to_f64_lossy)
}

/// Computes all statistics from the current weight `w`, output gradients `d`
/// and their initial values.
pub fn layer_alignment<T: Scalar>(w: &Matrix<T>, d: &Matrix<T>, w0: &Matrix<T>, d0: &Matrix<T>) -> Result<LayerAlignment> {
    if w.shape() != w0.shape() || d.shape() != d0.shape() || d.cols() != w.rows() {
        return Err(Error::shape(
            "layer_alignment",
            format!("W {:?}, W0 {:?}, D {:?}, D0 {:?}", w.shape(), w0.shape(), d.shape(), d0.shape()),
        ));
    }
    let inv_n = T::one() / T::of(d.rows().max(1) as f64);
    let wbar = w.sub(w0)?;
    let dbar = d.sub(d0)?;
    // W^T K W = (D W)^T (D W) / n.
    let sandwich = |dm: &Matrix<T>, wm: &Matrix<T>| -> Result<Matrix<T>> { Ok(dm.matmul(wm)?.gram().scale(inv_n)) };

    let nfm = w.gram();
    let agop = sandwich(d, w)?;
    let c_nfm = wbar.gram();
    let c_agop = sandwich(d, &wbar)?;
    let dc_agop = sandwich(&dbar, &wbar)?;
    let nfm0 = w0.gram();
    let ptk_agop0 = sandwich(&dbar, w0)?;

    Ok(LayerAlignment {
        uc_nfa: lossy(rho(&nfm, &agop)?),
        c_nfa: lossy(rho(&c_nfm, &c_agop)?),
        dc_nfa: lossy(rho(&c_nfm, &dc_agop)?),
        ptk_c_nfa: lossy(rho(&nfm0, &ptk_agop0)?),
        c_uc_ratio: ratio(c_nfm.frob_inner(&c_agop)?, nfm.frob_inner(&agop)?),
        dc_ratio: ratio(c_nfm.frob_inner(&dc_agop)?, c_nfm.frob_inner(&c_agop)?),
    })
}

/// `rho(W^T W, W^T K W)` for a given feature covariance.
pub fn nfa_with_cov<T: Scalar>(w: &Matrix<T>, k: &Matrix<T>) -> Result<Option<T>> {
    rho(&w.gram(), &w.sandwich(k)?)
}

pub fn uc_nfa<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, layer: usize) -> Result<Option<T>> {
    let (_, d) = layer_preact_grads(net, x, layer)?;
    nfa_with_cov(net.weight(layer)?, &feature_cov(&d))
}

fn with_reference<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<LayerAlignment> {
    reference.check(x, layer)?;
    let (_, d) = layer_preact_grads(net, x, layer)?;
    layer_alignment(net.weight(layer)?, &d, &reference.weights[layer], &reference.preact_grads[layer])
}

/// Centered weights against the current feature covariance.
pub fn c_nfa<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<Option<f64>> {
    Ok(with_reference(net, reference, x, layer)?.c_nfa)
}

/// Centered weights against the centered feature covariance.
pub fn dc_nfa<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<Option<f64>> {
    Ok(with_reference(net, reference, x, layer)?.dc_nfa)
}

pub fn dc_ratio<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<Option<f64>> {
    Ok(with_reference(net, reference, x, layer)?.dc_ratio)
}

/// Initial weights against the centered feature covariance.
pub fn ptk_c_nfa<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<Option<f64>> {
    Ok(with_reference(net, reference, x, layer)?.ptk_c_nfa)
}

pub fn c_uc_ratio<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<Option<f64>> {
    Ok(with_reference(net, reference, x, layer)?.c_uc_ratio)
}

pub fn measure_layer<T: Scalar>(net: &Mlp<T>, reference: &ReferenceState<T>, x: &Matrix<T>, layer: usize) -> Result<LayerAlignment> {
    with_reference(net, reference, x, layer)
}

/// One CSV row of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfaSnapshot {
    pub step: usize,
    pub layer: usize,
    #[serde(flatten)]
    pub alignment: LayerAlignment,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}
