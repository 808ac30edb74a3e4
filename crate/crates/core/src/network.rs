//! Bias-free fully-connected networks with a scalar output.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, random_gaussian};
use crate::{Error, Matrix, Result, Rng, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Quadratic,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, u: T) -> T {
        match self {
            Activation::Relu => u.max(T::zero()),
            Activation::Quadratic => u * u,
            Activation::Identity => u,
        }
    }

    /// Derivative; relu uses 0 at the kink.
    #[inline]
    pub fn derivative<T: Scalar>(self, u: T) -> T {
        match self {
            Activation::Relu => {
                if u > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Quadratic => u + u,
            Activation::Identity => T::one(),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Activation::Relu => "relu",
            Activation::Quadratic => "quadratic",
            Activation::Identity => "identity",
        };
        f.write_str(name)
    }
}

/// Widths run from the input dimension to the scalar output; `init_scales`
/// has one entry per weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init_scales: Vec<f64>,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Invalid(format!(
                "need at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.last() != Some(&1) {
            return Err(Error::Invalid(format!("output width must be 1, got widths {:?}", self.widths)));
        }
        if self.widths.contains(&0) {
            return Err(Error::Invalid(format!("zero width in {:?}", self.widths)));
        }
        if self.init_scales.len() != self.widths.len() - 1 {
            return Err(Error::Invalid(format!(
                "{} init scales for {} weight matrices",
                self.init_scales.len(),
                self.widths.len() - 1
            )));
        }
        if self.init_scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Invalid(format!("init scales must be finite and >= 0: {:?}", self.init_scales)));
        }
        Ok(())
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Weights `W[l]` map layer `l` inputs (width `k_l`) to pre-activations of
/// width `k_{l+1}`; the last one is the linear readout.
#[derive(Debug)]
pub struct Mlp<T> {
    weights: Vec<Matrix<T>>,
    activation: Activation,
    id: u64,
    version: u64,
}

impl<T: Scalar> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp { weights: self.weights.clone(), activation: self.activation, id: fresh_id(), version: 0 }
    }
}

/// Layer inputs `x_l` (n x k_l) and pre-activations `h_l` (n x k_{l+1}).
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub inputs: Vec<Matrix<T>>,
    pub preacts: Vec<Matrix<T>>,
    pub outputs: Vec<T>,
    net_id: u64,
    net_version: u64,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn n(&self) -> usize {
        self.outputs.len()
    }
}

#[derive(Clone, Debug)]
pub struct BackwardResult<T> {
    /// Loss gradient per weight matrix.
    pub weight_grads: Vec<Matrix<T>>,
    /// Row `a` of entry `l` is the output gradient w.r.t. `h_l` at sample `a`.
    pub preact_grads: Vec<Matrix<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init(config: &MlpConfig) -> Result<Self> {
        Self::init_with(config, &mut Rng::new(config.seed))
    }

    /// Entry (i, j) of `W[l]` is drawn from `N(0, s_l / k_l)`.
    pub fn init_with(config: &MlpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let weights = config
            .widths
            .windows(2)
            .zip(&config.init_scales)
            .map(|(w, &s)| random_gaussian(rng, w[1], w[0], (s / w[0] as f64).sqrt()))
            .collect();
        Ok(Mlp { weights, activation: config.activation, id: fresh_id(), version: 0 })
    }

    pub fn from_weights(weights: Vec<Matrix<T>>, activation: Activation) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Invalid("need at least one hidden layer".into()));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(
                    "from_weights",
                    format!("layer {} is {:?} but layer {} is {:?}", l, pair[0].shape(), l + 1, pair[1].shape()),
                ));
            }
        }
        if weights.last().map(Matrix::rows) != Some(1) {
            return Err(Error::Invalid("readout must have a single output".into()));
        }
        Ok(Mlp { weights, activation, id: fresh_id(), version: 0 })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of weight matrices (hidden layers + readout).
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(Matrix::cols).collect();
        w.push(1);
        w
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn weight(&self, layer: usize) -> Result<&Matrix<T>> {
        self.weights
            .get(layer)
            .ok_or_else(|| Error::Invalid(format!("layer {layer} out of range (depth {})", self.depth())))
    }

    pub fn set_weight(&mut self, layer: usize, w: Matrix<T>) -> Result<()> {
        let cur = self.weight(layer)?;
        if cur.shape() != w.shape() {
            return Err(Error::shape("set_weight", format!("{:?} vs {:?}", w.shape(), cur.shape())));
        }
        self.weights[layer] = w;
        self.version += 1;
        Ok(())
    }

    /// `W[layer] += alpha * delta`.
    pub fn update_weight(&mut self, layer: usize, alpha: T, delta: &Matrix<T>) -> Result<()> {
        self.weight(layer)?;
        self.weights[layer].axpy(alpha, delta)?;
        self.version += 1;
        Ok(())
    }

    pub fn scale_layer(&mut self, layer: usize, factor: T) -> Result<()> {
        self.weight(layer)?;
        self.weights[layer].scale_in_place(factor);
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<ForwardCache<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("forward", format!("input has {} columns, net expects {}", x.cols(), self.input_dim())));
        }
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut preacts = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let h = cur.matmul_nt(w)?;
            inputs.push(cur);
            cur = if l + 1 < depth { h.map(|u| self.activation.apply(u)) } else { Matrix::zeros(0, 0) };
            preacts.push(h);
        }
        let outputs = preacts[depth - 1].as_slice().to_vec();
        Ok(ForwardCache { inputs, preacts, outputs, net_id: self.id, net_version: self.version })
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        Ok(self.forward(x)?.outputs)
    }

    fn check_cache(&self, cache: &ForwardCache<T>) -> Result<()> {
        if cache.net_id != self.id || cache.net_version != self.version {
            return Err(Error::Invalid("forward cache is stale for this network".into()));
        }
        Ok(())
    }

    /// Output gradients with respect to every layer's pre-activations.
    pub fn preact_grads(&self, cache: &ForwardCache<T>) -> Result<Vec<Matrix<T>>> {
        self.check_cache(cache)?;
        let depth = self.depth();
        let n = cache.n();
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        grads[depth - 1] = Matrix::from_vec(n, 1, vec![T::one(); n])?;
        for l in (0..depth - 1).rev() {
            let back = grads[l + 1].matmul(&self.weights[l + 1])?;
            let act = self.activation;
            grads[l] = back.zip_map(&cache.preacts[l], "preact_grads", |g, h| g * act.derivative(h))?;
        }
        Ok(grads)
    }

    /// Reverse pass; `ldot[a]` is the loss derivative w.r.t. output `a`.
    pub fn backward(&self, cache: &ForwardCache<T>, ldot: &[T]) -> Result<BackwardResult<T>> {
        if ldot.len() != cache.n() {
            return Err(Error::shape("backward", format!("{} residuals for {} samples", ldot.len(), cache.n())));
        }
        let preact_grads = self.preact_grads(cache)?;
        let weight_grads = preact_grads
            .iter()
            .zip(&cache.inputs)
            .map(|(d, x)| d.scale_rows(ldot)?.matmul_tn(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackwardResult { weight_grads, preact_grads })
    }

    /// `W[l]^T W[l]`.
    pub fn nfm(&self, layer: usize) -> Result<Matrix<T>> {
        Ok(self.weight(layer)?.gram())
    }

    /// Single-sample pass returning `x_l` and the output gradient w.r.t. `h_l`.
    /// Kept separate from the batched path so the two can check each other.
    pub fn sample_layer_grad(&self, x: &[T], layer: usize) -> Result<(Vec<T>, Vec<T>)> {
        self.weight(layer)?;
        if x.len() != self.input_dim() {
            return Err(Error::shape("sample_layer_grad", format!("{} inputs, expected {}", x.len(), self.input_dim())));
        }
        let depth = self.depth();
        let mut xs = vec![x.to_vec()];
        let mut hs = Vec::with_capacity(depth);
        for w in &self.weights {
            let cur = xs.last().expect("nonempty");
            let h: Vec<T> = (0..w.rows()).map(|i| dot(w.row(i), cur)).collect();
            xs.push(h.iter().map(|&u| self.activation.apply(u)).collect());
            hs.push(h);
        }
        let mut g = vec![T::one()];
        for l in (layer + 1..depth).rev() {
            // g is d f / d h_l; move to d f / d h_{l-1}.
            let w = &self.weights[l];
            let mut prev = vec![T::zero(); w.cols()];
            for (i, &gi) in g.iter().enumerate() {
                for (p, &wij) in prev.iter_mut().zip(w.row(i)) {
                    *p += gi * wij;
                }
            }
            for (p, &h) in prev.iter_mut().zip(&hs[l - 1]) {
                *p *= self.activation.derivative(h);
            }
            g = prev;
        }
        Ok((xs.swap_remove(layer), g))
    }
}

/// `D_l` rows from a fresh forward pass.
pub fn layer_preact_grads<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, layer: usize) -> Result<(ForwardCache<T>, Matrix<T>)> {
    net.weight(layer)?;
    let cache = net.forward(x)?;
    let mut d = net.preact_grads(&cache)?;
    Ok((cache, d.swap_remove(layer)))
}

/// AGOP from explicit per-sample input gradients: `(1/n) sum_a g_a g_a^T`.
pub fn agop_direct<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
    let w = net.weight(layer)?;
    let n = x.rows();
    let mut j = Matrix::zeros(n, w.cols());
    for a in 0..n {
        let (_, g) = net.sample_layer_grad(x.row(a), layer)?;
        let grad = w.matvec_t(&g)?;
        j.row_mut(a).copy_from_slice(&grad);
    }
    Ok(j.gram().scale(T::one() / T::of(n as f64)))
}

/// AGOP as `W^T K W`.
pub fn agop_factored<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
    let k = ptk_feature_cov(net, x, layer)?;
    net.weight(layer)?.sandwich(&k)
}

/// `K_l = (1/n) D_l^T D_l`, of size `k_{l+1} x k_{l+1}`.
pub fn ptk_feature_cov<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
    let (_, d) = layer_preact_grads(net, x, layer)?;
    Ok(feature_cov(&d))
}

pub(crate) fn feature_cov<T: Scalar>(d: &Matrix<T>) -> Matrix<T> {
    d.gram().scale(T::one() / T::of(d.rows().max(1) as f64))
}

/// Pre-activation tangent kernel `D_l(X) D_l(Z)^T`.
pub fn ptk_kernel<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, z: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
    let (_, dx) = layer_preact_grads(net, x, layer)?;
    let (_, dz) = layer_preact_grads(net, z, layer)?;
    dx.matmul_nt(&dz)
}

/// Inner products of per-sample gradients of the output w.r.t. `W[l]`.
pub fn layerwise_entk<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, z: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
    let flat = |m: &Matrix<T>| -> Result<Matrix<T>> {
        let w = net.weight(layer)?;
        let width = w.rows() * w.cols();
        let mut out = Matrix::zeros(m.rows(), width);
        for a in 0..m.rows() {
            let (xl, g) = net.sample_layer_grad(m.row(a), layer)?;
            let row = out.row_mut(a);
            for (i, &gi) in g.iter().enumerate() {
                for (j, &xj) in xl.iter().enumerate() {
                    row[i * xl.len() + j] = gi * xj;
                }
            }
        }
        Ok(out)
    };
    flat(x)?.matmul_nt(&flat(z)?)
}

/// Largest negative eigenvalue relative to the largest eigenvalue magnitude.
pub fn psd_violation<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    let e = crate::linalg::sym_eig(m)?;
    let top = e.values.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let low = e.values.last().copied().unwrap_or(T::zero());
    if top == T::zero() {
        return Ok(T::zero());
    }
    Ok((-low).max(T::zero()) / top)
}
