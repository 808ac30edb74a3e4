//! Time derivatives of the centered feature matrix and gradient outer
//! product at initialization, and their kernel-side expressions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::rho;
use crate::network::{feature_cov, layer_preact_grads, ptk_kernel, Mlp, MlpConfig};
use crate::{Error, Matrix, Result, Rng, Scalar};

/// Which per-sample loss derivative drives the first step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    /// `-y`, as if the net output were zero.
    #[default]
    ZeroOutput,
    /// `f(x) - y` from the current outputs.
    Current,
}

fn residual<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, y: &[T], kind: Residual) -> Result<Vec<T>> {
    if y.len() != x.rows() {
        return Err(Error::shape("residual", format!("{} labels for {} samples", y.len(), x.rows())));
    }
    Ok(match kind {
        Residual::ZeroOutput => y.iter().map(|&v| -v).collect(),
        Residual::Current => net.predict(x)?.iter().zip(y).map(|(&f, &t)| f - t).collect(),
    })
}

/// `(Wdot^T Wdot, Wdot^T K Wdot)` for layer `layer` from backprop gradients,
/// with `Wdot = -grad` and `K = D^T D / n`.
pub fn derivative_grams<T: Scalar>(
    net: &Mlp<T>,
    x: &Matrix<T>,
    y: &[T],
    layer: usize,
    kind: Residual,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let ldot = residual(net, x, y, kind)?;
    let cache = net.forward(x)?;
    let back = net.backward(&cache, &ldot)?;
    let wdot = back.weight_grads[layer].scale(-T::one());
    let k = feature_cov(&back.preact_grads[layer]);
    Ok((wdot.gram(), wdot.sandwich(&k)?))
}

/// Same pair through the kernel: `X_l^T L Theta L X_l` and
/// `(1/n) X_l^T L Theta^2 L X_l`.
pub fn derivative_grams_via_kernel<T: Scalar>(
    net: &Mlp<T>,
    x: &Matrix<T>,
    y: &[T],
    layer: usize,
    kind: Residual,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let ldot = residual(net, x, y, kind)?;
    let (cache, _) = layer_preact_grads(net, x, layer)?;
    let theta = ptk_kernel(net, x, x, layer)?;
    let lx = cache.inputs[layer].scale_rows(&ldot)?;
    let t1 = lx.sandwich(&theta)?;
    let theta2 = theta.matmul(&theta)?;
    let t2 = lx.sandwich(&theta2)?.scale(T::one() / T::of(x.rows() as f64));
    Ok((t1, t2))
}

/// Correlation of the first-layer derivative grams at zero output.
pub fn observed_derivative_correlation<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, y: &[T]) -> Result<Option<T>> {
    let (g1, g2) = derivative_grams(net, x, y, 0, Residual::ZeroOutput)?;
    rho(&g1, &g2)
}

/// `(X^T Y Theta Y X, (1/n) X^T Y Theta^2 Y X)` for given `n x n` kernels.
pub fn kernel_grams<T: Scalar>(theta: &Matrix<T>, theta2: &Matrix<T>, x: &Matrix<T>, y: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = x.rows();
    if theta.shape() != (n, n) || theta2.shape() != (n, n) {
        return Err(Error::shape("kernel_grams", format!("kernels {:?}, {:?} for {n} samples", theta.shape(), theta2.shape())));
    }
    let yx = x.scale_rows(y)?;
    Ok((yx.sandwich(theta)?, yx.sandwich(theta2)?.scale(T::one() / T::of(n as f64))))
}

/// Correlation predicted by replacing the kernels with their expectations.
pub fn first_order_prediction<T: Scalar>(e_theta: &Matrix<T>, e_theta2: &Matrix<T>, x: &Matrix<T>, y: &[T]) -> Result<Option<T>> {
    let (g1, g2) = kernel_grams(e_theta, e_theta2, x, y)?;
    rho(&g1, &g2)
}

/// Monte-Carlo `(E[Theta], E[Theta^2])` for the first layer over `n_seeds`
/// nets drawn from independent streams of `config.seed`.
pub fn mc_expected_ptk(config: &MlpConfig, x: &Matrix<f64>, n_seeds: usize) -> Result<(Matrix<f64>, Matrix<f64>)> {
    if n_seeds == 0 {
        return Err(Error::Invalid("n_seeds must be positive".into()));
    }
    let per: Vec<(Matrix<f64>, Matrix<f64>)> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(config.seed, i as u64);
            let net = Mlp::<f64>::init_with(config, &mut rng)?;
            let theta = ptk_kernel(&net, x, x, 0)?;
            let theta2 = theta.matmul(&theta)?;
            Ok((theta, theta2))
        })
        .collect::<Result<_>>()?;
    let n = x.rows();
    let (mut t1, mut t2) = (Matrix::zeros(n, n), Matrix::zeros(n, n));
    for (a, b) in &per {
        t1.axpy(1.0, a)?;
        t2.axpy(1.0, b)?;
    }
    let inv = 1.0 / n_seeds as f64;
    Ok((t1.scale(inv), t2.scale(inv)))
}

/// Expected derivative grams of the one-hidden-layer quadratic net, in the
/// closed form `(C^2, 3 tr(B) C^2 + 6 C B C)` with `C = X^T Y X`, `B = X^T X`.
pub fn expected_grams_quadratic<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    let c = x.scale_rows(y)?.matmul_tn(x)?;
    let b = x.gram();
    let c2 = &c * &c;
    let cbc = &(&c * &b) * &c;
    let second = c2.scale(T::of(3.0) * b.trace()?).add(&cbc.scale(T::of(6.0)))?;
    Ok((c2, second))
}

/// Exact width-`k` expectation of the same pair, `(C^2, C E[R B R] C)` with
/// `E[R B R] = (3/k)(tr(B) I + 2B) + (1 - 1/k) B`.
pub fn expected_grams_quadratic_exact<T: Scalar>(x: &Matrix<T>, y: &[T], k: usize) -> Result<(Matrix<T>, Matrix<T>)> {
    if k == 0 {
        return Err(Error::Invalid("width must be positive".into()));
    }
    let c = x.scale_rows(y)?.matmul_tn(x)?;
    let b = x.gram();
    let kf = k as f64;
    let rbr = b
        .scale(T::of(6.0 / kf + 1.0 - 1.0 / kf))
        .shift_diag(T::of(3.0 / kf) * b.trace()?)?;
    Ok((&c * &c, &(&c * &rbr) * &c))
}

/// Derivative grams of a one-hidden-layer quadratic net in the theory
/// normalization: `(C R C, C R B R C)`.
pub fn quadratic_grams<T: Scalar>(r: &Matrix<T>, x: &Matrix<T>, y: &[T]) -> Result<(Matrix<T>, Matrix<T>)> {
    let c = x.scale_rows(y)?.matmul_tn(x)?;
    let rc = r.matmul(&c)?;
    let b = x.gram();
    Ok((c.matmul(&rc)?, rc.sandwich(&b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_gaussian;
    use crate::network::Activation;
    use crate::theory::free::{quadratic_r, quadratic_theory_config};

    fn rel(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.sub(b).unwrap().frob_norm() / a.frob_norm().max(b.frob_norm()).max(1e-300)
    }

    fn cfg(act: Activation, widths: Vec<usize>, seed: u64) -> MlpConfig {
        let init_scales = vec![1.0; widths.len() - 1];
        MlpConfig { widths, activation: act, init_scales, seed }
    }

    #[test]
    fn zero_labels_give_zero_grams() {
        let net = Mlp::<f64>::init(&cfg(Activation::Relu, vec![4, 8, 1], 1)).unwrap();
        let x = random_gaussian(&mut Rng::new(2), 6, 4, 1.0);
        let (a, b) = derivative_grams(&net, &x, &[0.0; 6], 0, Residual::ZeroOutput).unwrap();
        assert_eq!(a.max_abs(), 0.0);
        assert_eq!(b.max_abs(), 0.0);
        assert!(observed_derivative_correlation(&net, &x, &[0.0; 6]).unwrap().is_none());
    }

    #[test]
    fn linear_net_by_hand() {
        // f(x) = v^T W x with W = I (2x2), v = (1, 2): Theta = 5 for every pair.
        let w = Matrix::identity(2);
        let v = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let net = Mlp::from_weights(vec![w, v], Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = [1.0, -1.0];
        let (g1, g2) = derivative_grams(&net, &x, &y, 0, Residual::ZeroOutput).unwrap();
        // s = X^T y = (0, -1); Wdot^T Wdot = 5 s s^T, Wdot^T K Wdot = 25 s s^T.
        let ss = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(rel(&g1, &ss.scale(5.0)) < 1e-15);
        assert!(rel(&g2, &ss.scale(25.0)) < 1e-15);
    }

    #[test]
    fn backprop_and_kernel_paths_agree() {
        for act in [Activation::Relu, Activation::Quadratic, Activation::Identity] {
            let net = Mlp::<f64>::init(&cfg(act, vec![16, 24, 20, 1], 3)).unwrap();
            let mut rng = Rng::new(4);
            let x = random_gaussian(&mut rng, 16, 16, 1.0);
            let y = rng.normals(16, 1.0);
            for layer in 0..3 {
                for kind in [Residual::ZeroOutput, Residual::Current] {
                    let (a1, b1) = derivative_grams(&net, &x, &y, layer, kind).unwrap();
                    let (a2, b2) = derivative_grams_via_kernel(&net, &x, &y, layer, kind).unwrap();
                    assert!(rel(&a1, &a2) < 1e-9, "{act} {layer}");
                    assert!(rel(&b1, &b2) < 1e-9, "{act} {layer}");
                }
            }
        }
    }

    #[test]
    fn quadratic_kernel_is_input_sandwich_of_r() {
        let (d, k) = (8, 32);
        let net = Mlp::<f64>::init(&quadratic_theory_config(d, k, 6)).unwrap();
        let mut rng = Rng::new(7);
        let x = random_gaussian(&mut rng, 10, d, 1.0);
        let y = rng.normals(10, 1.0);
        let r = quadratic_r(&net).unwrap();
        let theta = ptk_kernel(&net, &x, &x, 0).unwrap();
        assert!(rel(&theta, &x.transpose().sandwich(&r).unwrap().scale(4.0)) < 1e-12);
        let (a, b) = derivative_grams(&net, &x, &y, 0, Residual::ZeroOutput).unwrap();
        let (qa, qb) = quadratic_grams(&r, &x, &y).unwrap();
        assert!(rel(&a, &qa.scale(4.0)) < 1e-12);
        assert!(rel(&b, &qb.scale(16.0 / 10.0)) < 1e-12);
    }

    #[test]
    fn identity_data_closed_form() {
        let d = 5;
        let x = Matrix::<f64>::identity(d);
        let (a, b) = expected_grams_quadratic(&x, &[1.0; 5]).unwrap();
        assert!(rel(&a, &Matrix::identity(d)) < 1e-15);
        assert!(rel(&b, &Matrix::scalar(d, 3.0 * d as f64 + 6.0)) < 1e-15);
        let (a, b) = expected_grams_quadratic(&x, &[0.0; 5]).unwrap();
        assert_eq!((a.max_abs(), b.max_abs()), (0.0, 0.0));
    }

    #[test]
    fn exact_expectation_matches_monte_carlo() {
        let (d, k, seeds) = (6, 24, 4000);
        let mut rng = Rng::new(11);
        let x = random_gaussian(&mut rng, 8, d, 0.5);
        let y = rng.normals(8, 1.0);
        let (e1, e2) = expected_grams_quadratic_exact(&x, &y, k).unwrap();
        let (mut m1, mut m2) = (Matrix::zeros(d, d), Matrix::zeros(d, d));
        for s in 0..seeds {
            let net = Mlp::<f64>::init_with(&quadratic_theory_config(d, k, 0), &mut Rng::stream(99, s)).unwrap();
            let (a, b) = quadratic_grams(&quadratic_r(&net).unwrap(), &x, &y).unwrap();
            m1.axpy(1.0 / seeds as f64, &a).unwrap();
            m2.axpy(1.0 / seeds as f64, &b).unwrap();
        }
        assert!(rel(&m1, &e1) < 0.05, "{}", rel(&m1, &e1));
        assert!(rel(&m2, &e2) < 0.08, "{}", rel(&m2, &e2));
    }

    #[test]
    fn projector_kernel_predicts_one() {
        let mut rng = Rng::new(12);
        let x = random_gaussian(&mut rng, 10, 4, 1.0);
        let y = rng.normals(10, 1.0);
        let q = crate::linalg::qr(&random_gaussian::<f64>(&mut rng, 10, 3, 1.0)).unwrap().0;
        let p = q.outer_gram();
        let c = first_order_prediction(&p, &p, &x, &y).unwrap().unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(first_order_prediction(&p, &p, &x, &[0.0; 10]).unwrap().is_none());
    }

    #[test]
    fn single_seed_expectation_is_that_net() {
        let c = cfg(Activation::Relu, vec![5, 7, 1], 21);
        let x = random_gaussian(&mut Rng::new(1), 6, 5, 1.0);
        let (t1, t2) = mc_expected_ptk(&c, &x, 1).unwrap();
        let net = Mlp::<f64>::init_with(&c, &mut Rng::stream(21, 0)).unwrap();
        let theta = ptk_kernel(&net, &x, &x, 0).unwrap();
        assert!(rel(&t1, &theta) < 1e-15);
        assert!(rel(&t2, &(&theta * &theta)) < 1e-15);
    }
}
