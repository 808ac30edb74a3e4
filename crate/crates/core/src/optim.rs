//! Full-batch training with plain gradient descent or layerwise normalized
//! updates, recording alignment statistics along the way.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::metrics::{layer_alignment, nfa_with_cov, NfaSnapshot, ReferenceState};
use crate::network::{feature_cov, Mlp};
use crate::{Error, Matrix, Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Gd,
    Slo,
    AdaptiveSlo,
}

fn default_scale() -> f64 {
    20.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub variant: Variant,
    pub eta: f64,
    /// Per-layer speeds for `slo`.
    #[serde(default)]
    pub speeds: Vec<f64>,
    /// Added to the gradient norm before dividing.
    #[serde(default)]
    pub epsilon: f64,
    /// Speed given to the least aligned layer under `adaptive_slo`; the rest get its inverse.
    #[serde(default = "default_scale")]
    pub adaptive_scale: f64,
}

impl OptimizerSpec {
    pub fn gd(eta: f64) -> Self {
        OptimizerSpec { variant: Variant::Gd, eta, speeds: Vec::new(), epsilon: 0.0, adaptive_scale: default_scale() }
    }

    pub fn slo(eta: f64, speeds: Vec<f64>, epsilon: f64) -> Self {
        OptimizerSpec { variant: Variant::Slo, eta, speeds, epsilon, adaptive_scale: default_scale() }
    }

    pub fn adaptive_slo(eta: f64, scale: f64, epsilon: f64) -> Self {
        OptimizerSpec { variant: Variant::AdaptiveSlo, eta, speeds: Vec::new(), epsilon, adaptive_scale: scale }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive and finite, got {}", self.eta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        match self.variant {
            Variant::Gd => {}
            Variant::Slo => {
                if self.speeds.len() != depth {
                    return Err(Error::Config(format!("slo needs {depth} speeds, got {}", self.speeds.len())));
                }
                if self.speeds.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                    return Err(Error::Config("speeds must be nonnegative and finite".into()));
                }
            }
            Variant::AdaptiveSlo => {
                if !(self.adaptive_scale > 0.0 && self.adaptive_scale.is_finite()) {
                    return Err(Error::Config(format!("adaptive_scale must be positive, got {}", self.adaptive_scale)));
                }
            }
        }
        Ok(())
    }
}

/// `(1/2n) sum (f - y)^2` and its derivative `(f - y)/n`.
pub fn mse_loss_and_ldot<T: Scalar>(f: &[T], y: &[T]) -> Result<(T, Vec<T>)> {
    if f.len() != y.len() || f.is_empty() {
        return Err(Error::shape("mse", format!("{} outputs, {} labels", f.len(), y.len())));
    }
    let n = T::of(f.len() as f64);
    let r: Vec<T> = f.iter().zip(y).map(|(&a, &b)| a - b).collect();
    let loss = r.iter().map(|&v| v * v).sum::<T>() / (n + n);
    Ok((loss, r.into_iter().map(|v| v / n).collect()))
}

pub fn mse_loss<T: Scalar>(net: &Mlp<T>, data: &Dataset<T>) -> Result<T> {
    Ok(mse_loss_and_ldot(&net.predict(&data.x)?, &data.y)?.0)
}

fn check_grads<T: Scalar>(net: &Mlp<T>, grads: &[Matrix<T>]) -> Result<()> {
    if grads.len() != net.depth() {
        return Err(Error::shape("step", format!("{} gradients for {} layers", grads.len(), net.depth())));
    }
    Ok(())
}

/// `W <- W - eta * grad` for every layer.
pub fn gd_step<T: Scalar>(net: &mut Mlp<T>, grads: &[Matrix<T>], eta: f64) -> Result<()> {
    check_grads(net, grads)?;
    for (l, g) in grads.iter().enumerate() {
        net.update_weight(l, T::of(-eta), g)?;
    }
    Ok(())
}

/// `W_l <- W_l - eta * C_l * grad / (epsilon + |grad|_F)`.
pub fn slo_step<T: Scalar>(net: &mut Mlp<T>, grads: &[Matrix<T>], eta: f64, speeds: &[f64], epsilon: f64) -> Result<()> {
    check_grads(net, grads)?;
    if speeds.len() != grads.len() {
        return Err(Error::shape("slo_step", format!("{} speeds for {} layers", speeds.len(), grads.len())));
    }
    for (l, (g, &c)) in grads.iter().zip(speeds).enumerate() {
        let norm = g.frob_norm().to_f64_lossy();
        let denom = epsilon + norm;
        if c == 0.0 || denom == 0.0 {
            continue;
        }
        net.update_weight(l, T::of(-eta * c / denom), g)?;
    }
    Ok(())
}

/// Speed `s` for the layer with the lowest alignment, `1/s` elsewhere.
/// Undefined values are never picked unless every value is undefined, in
/// which case layer 0 is.
pub fn adaptive_speeds(uc_nfa: &[Option<f64>], scale: f64) -> Vec<f64> {
    let mut pick = 0;
    let mut best = f64::INFINITY;
    for (l, v) in uc_nfa.iter().enumerate() {
        if let Some(v) = *v {
            if v < best {
                best = v;
                pick = l;
            }
        }
    }
    (0..uc_nfa.len()).map(|l| if l == pick { scale } else { 1.0 / scale }).collect()
}

/// Picks speeds from the current alignments, applies them, and returns them.
pub fn adaptive_slo_step<T: Scalar>(
    net: &mut Mlp<T>,
    grads: &[Matrix<T>],
    spec: &OptimizerSpec,
    uc_nfa: &[Option<f64>],
) -> Result<Vec<f64>> {
    if uc_nfa.len() != net.depth() {
        return Err(Error::shape("adaptive_slo_step", format!("{} alignments for {} layers", uc_nfa.len(), net.depth())));
    }
    let speeds = adaptive_speeds(uc_nfa, spec.adaptive_scale);
    slo_step(net, grads, spec.eta, &speeds, spec.epsilon)?;
    Ok(speeds)
}

/// Applies one update according to `spec`, given gradients and the output
/// gradients used to compute them.
pub fn apply_step<T: Scalar>(net: &mut Mlp<T>, grads: &[Matrix<T>], preact_grads: &[Matrix<T>], spec: &OptimizerSpec) -> Result<()> {
    match spec.variant {
        Variant::Gd => gd_step(net, grads, spec.eta),
        Variant::Slo => slo_step(net, grads, spec.eta, &spec.speeds, spec.epsilon),
        Variant::AdaptiveSlo => {
            let uc = (0..net.depth())
                .map(|l| Ok(nfa_with_cov(net.weight(l)?, &feature_cov(&preact_grads[l]))?.map(Scalar::to_f64_lossy)))
                .collect::<Result<Vec<_>>>()?;
            adaptive_slo_step(net, grads, spec, &uc).map(|_| ())
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<NfaSnapshot>,
    pub seed: u64,
    pub config_hash: String,
}

impl TrainLog {
    /// Measurement steps in order.
    pub fn steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.step).collect();
        s.dedup();
        s
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &NfaSnapshot> {
        self.rows.iter().filter(move |r| r.layer == layer)
    }

    pub fn last(&self, layer: usize) -> Option<&NfaSnapshot> {
        self.layer(layer).last()
    }

    /// Writes one row per layer per measurement, with losses also divided by
    /// their maximum over the run.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let max_of = |f: fn(&NfaSnapshot) -> Option<f64>| self.rows.iter().filter_map(f).fold(0.0f64, f64::max);
        let train_max = max_of(|r| Some(r.train_loss));
        let test_max = max_of(|r| r.test_loss);
        let norm = |v: Option<f64>, m: f64| v.filter(|_| m > 0.0).map(|v| v / m);
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            "step", "layer", "uc_nfa", "c_nfa", "dc_nfa", "ptk_c_nfa", "c_uc_ratio", "dc_ratio", "train_loss", "test_loss", "train_loss_norm",
            "test_loss_norm",
        ])
        .map_err(|e| Error::io(path, e.into()))?;
        for r in &self.rows {
            let a = &r.alignment;
            w.write_record([
                r.step.to_string(),
                r.layer.to_string(),
                fmt(a.uc_nfa),
                fmt(a.c_nfa),
                fmt(a.dc_nfa),
                fmt(a.ptk_c_nfa),
                fmt(a.c_uc_ratio),
                fmt(a.dc_ratio),
                r.train_loss.to_string(),
                fmt(r.test_loss),
                fmt(norm(Some(r.train_loss), train_max)),
                fmt(norm(r.test_loss, test_max)),
            ])
            .map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Full-batch training for `steps` updates. Statistics are measured on the
/// training inputs before the first update, every `measure_every` updates,
/// and after the last one.
pub fn train<T: Scalar>(
    net: &mut Mlp<T>,
    train: &Dataset<T>,
    test: Option<&Dataset<T>>,
    spec: &OptimizerSpec,
    steps: usize,
    measure_every: usize,
) -> Result<TrainLog> {
    spec.validate(net.depth())?;
    if measure_every == 0 {
        return Err(Error::Config("measure_every must be positive".into()));
    }
    let x = &train.x;
    let reference = ReferenceState::capture(net, x)?;
    let mut log = TrainLog::default();
    for t in 0..=steps {
        let cache = net.forward(x)?;
        let f = cache.outputs.clone();
        let (loss, ldot) = mse_loss_and_ldot(&f, &train.y)?;
        if !loss.is_finite() || !net.weights().iter().all(|w| w.is_finite()) {
            return Err(Error::Divergence { last_good_step: t.saturating_sub(1) });
        }
        let back = net.backward(&cache, &ldot)?;
        if t % measure_every == 0 || t == steps {
            let test_loss = test.map(|d| mse_loss(net, d)).transpose()?.map(Scalar::to_f64_lossy);
            for l in 0..net.depth() {
                let alignment = layer_alignment(
                    net.weight(l)?,
                    &back.preact_grads[l],
                    &reference.weights()[l],
                    &reference.preact_grads()[l],
                )?;
                log.rows.push(NfaSnapshot { step: t, layer: l, alignment, train_loss: loss.to_f64_lossy(), test_loss });
            }
        }
        if t == steps {
            break;
        }
        apply_step(net, &back.weight_grads, &back.preact_grads, spec)?;
    }
    Ok(log)
}
