//! Self-checks that compare fast paths against slow independent ones.

use serde::Serialize;

use crate::datasets::{alignment_reversing_parts, chain_monomial_egop, chain_monomial_label, BalanceParams};
use crate::linalg::{random_gaussian, svd};
use crate::network::{agop_direct, agop_factored, layerwise_entk, ptk_kernel, Activation, Mlp, MlpConfig};
use crate::optim::mse_loss_and_ldot;
use crate::theory::{
    data_matrices, derivative_grams, derivative_grams_via_kernel, free_trio_oracle, predicted_denom1, predicted_denom2,
    predicted_numerator, quadratic_r, quadratic_theory_config, Conjugation, DataStats, Denom2Variant, McEstimate, RStats, Residual,
};
use crate::{Error, Matrix, Result, Rng};

pub const SUITES: &[&str] = &["fd", "identities", "egop", "free", "balance"];

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl OracleResult {
    fn below(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        OracleResult { suite, name: name.into(), passed: value <= tolerance, value, tolerance, detail: String::new() }
    }
}

fn rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<f64> {
    let scale = a.frob_norm().max(b.frob_norm());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(a.sub(b)?.frob_norm() / scale)
}

fn test_net(act: Activation, widths: Vec<usize>, seed: u64) -> Result<Mlp<f64>> {
    let init_scales = vec![1.0; widths.len() - 1];
    Mlp::init(&MlpConfig { widths, activation: act, init_scales, seed })
}

fn loss(net: &Mlp<f64>, x: &Matrix<f64>, y: &[f64]) -> Result<f64> {
    Ok(mse_loss_and_ldot(&net.predict(x)?, y)?.0)
}

/// Central differences of the training loss against backprop, per layer.
pub fn fd_suite(seed: u64) -> Result<Vec<OracleResult>> {
    let mut rng = Rng::new(seed);
    let x = random_gaussian(&mut rng, 12, 5, 1.0);
    let y: Vec<f64> = rng.normals(12, 1.0);
    let mut out = Vec::new();
    for act in [Activation::Quadratic, Activation::Identity] {
        let net = test_net(act, vec![5, 7, 6, 1], seed)?;
        let (_, ldot) = mse_loss_and_ldot(&net.predict(&x)?, &y)?;
        let back = net.backward(&net.forward(&x)?, &ldot)?;
        let h = 1e-5;
        for l in 0..net.depth() {
            let w = net.weight(l)?.clone();
            let mut fd = Matrix::zeros(w.rows(), w.cols());
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let mut probe = net.clone();
                    let mut e = Matrix::zeros(w.rows(), w.cols());
                    e.row_mut(i)[j] = 1.0;
                    probe.update_weight(l, h, &e)?;
                    let up = loss(&probe, &x, &y)?;
                    probe.update_weight(l, -2.0 * h, &e)?;
                    let down = loss(&probe, &x, &y)?;
                    fd.row_mut(i)[j] = (up - down) / (2.0 * h);
                }
            }
            out.push(OracleResult::below("fd", format!("{act:?} layer {l}"), rel_err(&fd, &back.weight_grads[l])?, 1e-5));
        }
    }
    Ok(out)
}

/// Kernel and factorization identities that must hold to rounding error.
pub fn identities_suite(seed: u64) -> Result<Vec<OracleResult>> {
    let mut rng = Rng::new(seed);
    let x = random_gaussian(&mut rng, 10, 6, 1.0);
    let y: Vec<f64> = rng.normals(10, 1.0);
    let mut out = Vec::new();
    for act in [Activation::Relu, Activation::Quadratic] {
        let net = test_net(act, vec![6, 9, 8, 1], seed)?;
        let cache = net.forward(&x)?;
        for l in 0..net.depth() {
            let entk = layerwise_entk(&net, &x, &x, l)?;
            let xl = &cache.inputs[l];
            let product = ptk_kernel(&net, &x, &x, l)?.hadamard(&xl.matmul_nt(xl)?)?;
            out.push(OracleResult::below("identities", format!("{act:?} entk layer {l}"), rel_err(&entk, &product)?, 1e-9));

            let a = derivative_grams(&net, &x, &y, l, Residual::Current)?;
            let b = derivative_grams_via_kernel(&net, &x, &y, l, Residual::Current)?;
            let err = rel_err(&a.0, &b.0)?.max(rel_err(&a.1, &b.1)?);
            out.push(OracleResult::below("identities", format!("{act:?} derivative grams layer {l}"), err, 1e-9));

            let err = rel_err(&agop_direct(&net, &x, l)?, &agop_factored(&net, &x, l)?)?;
            out.push(OracleResult::below("identities", format!("{act:?} agop layer {l}"), err, 1e-10));
        }
    }
    Ok(out)
}

/// Monte-Carlo gradient outer product of the raw chain target, with
/// finite-difference gradients, against the analytic matrix.
pub fn egop_suite(seed: u64) -> Result<Vec<OracleResult>> {
    let (d, samples, h) = (8, 1_000_000, 1e-4);
    let mut out = Vec::new();
    for r in [3, 5, 8] {
        let mut rng = Rng::stream(seed, r as u64);
        let mut grads = Matrix::zeros(samples, d);
        for a in 0..samples {
            let mut x: Vec<f64> = rng.normals(d, 1.0);
            for i in 0..d {
                let v = x[i];
                x[i] = v + h;
                let up = chain_monomial_label(&x, r);
                x[i] = v - h;
                let down = chain_monomial_label(&x, r);
                x[i] = v;
                grads.row_mut(a)[i] = (up - down) / (2.0 * h);
            }
        }
        let mc = grads.gram().scale(1.0 / samples as f64);
        let exact = chain_monomial_egop::<f64>(d, r)?;
        let err = mc.sub(&exact)?.frob_norm() / exact.frob_norm();
        out.push(OracleResult::below("egop", format!("chain r={r} d={d}"), err, 0.02));
    }
    Ok(out)
}

/// Closed-form normalized traces against random-rotation averages.
pub fn free_suite(seed: u64) -> Result<Vec<OracleResult>> {
    let (d, n, k, n_mc) = (64, 96, 128, 200);
    let mut rng = Rng::new(seed);
    let x = random_gaussian::<f64>(&mut rng, n, d, 1.0 / (d as f64).sqrt());
    let y: Vec<f64> = rng.normals(n, 1.0);
    let (a, b) = data_matrices(&x, &y)?;
    let r = quadratic_r(&Mlp::<f64>::init(&quadratic_theory_config(d, k, seed))?)?;
    let ds = DataStats::from_matrices(&a, &b)?;
    let rs = RStats::from_matrix(&r)?;
    let trio = free_trio_oracle(&mut rng, &a, &b, &r, n_mc, Conjugation::Unitary)?;
    let check = |name: &str, predicted: f64, est: &McEstimate| {
        let z = est.z_score(predicted).abs();
        OracleResult {
            suite: "free",
            name: name.into(),
            passed: z <= 3.0,
            value: z,
            tolerance: 3.0,
            detail: format!("predicted {predicted:.6e}, oracle {:.6e} +- {:.2e}", est.mean, est.stderr),
        }
    };
    Ok(vec![
        check("numerator", predicted_numerator(&ds, &rs), &trio.numerator),
        check("denom1", predicted_denom1(&ds, &rs), &trio.denom1),
        check("denom2", predicted_denom2(&ds, &rs, Denom2Variant::Symmetric), &trio.denom2),
    ])
}

/// The second block's Gram matrix is the squared pseudo-inverse of the first's.
pub fn balance_suite(seed: u64) -> Result<Vec<OracleResult>> {
    let mut out = Vec::new();
    for (n, d, gamma) in [(40, 8, 0.5), (60, 12, 0.3)] {
        let parts = alignment_reversing_parts::<f64>(&mut Rng::new(seed), n, d, &BalanceParams::with_gamma(gamma))?;
        let s = svd(&parts.x1)?;
        let inv_sq: Vec<f64> = s.s.iter().map(|&v| if v > 0.0 { v.powi(-4) } else { 0.0 }).collect();
        let v = s.v.take_cols(inv_sq.len());
        let expect = v.scale_cols(&inv_sq)?.matmul_nt(&v)?;
        let err = rel_err(&parts.x2.gram(), &expect)?;
        out.push(OracleResult::below("balance", format!("n={n} d={d} gamma={gamma}"), err, 1e-8));
    }
    Ok(out)
}

/// Runs one suite by name, or every suite for `all`.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<OracleResult>> {
    match name {
        "all" => {
            let mut all = Vec::new();
            for s in SUITES {
                all.extend(run_suite(s, seed)?);
            }
            Ok(all)
        }
        "fd" => fd_suite(seed),
        "identities" => identities_suite(seed),
        "egop" => egop_suite(seed),
        "free" => free_suite(seed),
        "balance" => balance_suite(seed),
        other => Err(Error::Config(format!("unknown oracle suite `{other}`; available: all, {}", SUITES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_suites_pass() {
        for suite in ["fd", "identities", "balance"] {
            for r in run_suite(suite, 11).unwrap() {
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", 0).is_err());
    }
}
