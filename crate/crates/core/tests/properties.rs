use nfa_core::datasets::{alignment_reversing, chain_monomial, corrupt_spectrum, BalanceParams};
use nfa_core::linalg::{random_gaussian, sym_eig};
use nfa_core::metrics::{layer_alignment, pearson_rho, rho};
use nfa_core::network::{agop_direct, agop_factored, psd_violation, ptk_feature_cov, Activation, Mlp, MlpConfig};
use nfa_core::optim::{adaptive_speeds, mse_loss_and_ldot, slo_step};
use nfa_core::theory::{predicted_correlation, r_stats, DataStats, Denom2Variant};
use nfa_core::{Matrix, Rng};
use proptest::prelude::*;

fn gaussian(seed: u64, r: usize, c: usize) -> Matrix<f64> {
    random_gaussian(&mut Rng::new(seed), r, c, 1.0)
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Quadratic), Just(Activation::Identity)]
}

fn small_net(act: Activation, d: usize, k: usize, seed: u64) -> Mlp<f64> {
    Mlp::init(&MlpConfig { widths: vec![d, k, k, 1], activation: act, init_scales: vec![1.0; 3], seed }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn correlation_is_bounded_symmetric_and_scale_free(seed in any::<u64>(), n in 1usize..7, c in 0.01f64..100.0) {
        let a = gaussian(seed, n, n);
        let b = gaussian(seed ^ 1, n, n);
        let v = rho(&a, &b).unwrap().unwrap();
        prop_assert!(v.abs() <= 1.0 + 1e-12);
        prop_assert!((v - rho(&b, &a).unwrap().unwrap()).abs() < 1e-12);
        prop_assert!((v - rho(&a.scale(c), &b).unwrap().unwrap()).abs() < 1e-12);
        prop_assert!((rho(&a, &a.scale(c)).unwrap().unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((rho(&a, &a.scale(-c)).unwrap().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_ignores_constant_shifts(seed in any::<u64>(), n in 2usize..7, shift in -5.0f64..5.0) {
        let a = gaussian(seed, n, n);
        let b = gaussian(seed ^ 2, n, n);
        let shifted = a.map(|v| v + shift);
        let p = pearson_rho(&a, &b).unwrap().unwrap();
        prop_assert!(p.abs() <= 1.0 + 1e-12);
        prop_assert!((p - pearson_rho(&shifted, &b).unwrap().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn feature_matrices_are_psd(seed in any::<u64>(), act in activation(), n in 2usize..12) {
        let net = small_net(act, 5, 7, seed);
        let x = gaussian(seed ^ 3, n, 5);
        for l in 0..net.depth() {
            prop_assert!(psd_violation(&net.nfm(l).unwrap()).unwrap() < 1e-10);
            prop_assert!(psd_violation(&agop_factored(&net, &x, l).unwrap()).unwrap() < 1e-10);
            prop_assert!(psd_violation(&ptk_feature_cov(&net, &x, l).unwrap()).unwrap() < 1e-10);
        }
    }

    #[test]
    fn agop_paths_agree(seed in any::<u64>(), act in activation(), n in 1usize..10) {
        let net = small_net(act, 4, 6, seed);
        let x = gaussian(seed ^ 4, n, 4);
        for l in 0..net.depth() {
            let a = agop_direct(&net, &x, l).unwrap();
            let b = agop_factored(&net, &x, l).unwrap();
            let scale = a.frob_norm().max(b.frob_norm()).max(1e-300);
            prop_assert!(a.sub(&b).unwrap().frob_norm() / scale < 1e-10);
        }
    }

    #[test]
    fn alignment_is_defined_in_bounds(seed in any::<u64>(), act in activation()) {
        let net = small_net(act, 4, 6, seed);
        let x = gaussian(seed ^ 5, 8, 4);
        let (_, d) = nfa_core::network::layer_preact_grads(&net, &x, 0).unwrap();
        let w0 = gaussian(seed ^ 6, 6, 4);
        let a = layer_alignment(net.weight(0).unwrap(), &d, &w0, &d).unwrap();
        for v in [a.uc_nfa, a.c_nfa, a.dc_nfa, a.ptk_c_nfa].into_iter().flatten() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn slo_moves_each_layer_by_its_budget(seed in any::<u64>(), eta in 0.001f64..0.1, c0 in 0.0f64..10.0, c1 in 0.0f64..10.0) {
        let mut net = Mlp::<f64>::init(&MlpConfig {
            widths: vec![3, 5, 1], activation: Activation::Relu, init_scales: vec![1.0, 1.0], seed,
        }).unwrap();
        let before: Vec<Matrix<f64>> = net.weights().to_vec();
        let grads = vec![gaussian(seed ^ 7, 5, 3), gaussian(seed ^ 8, 1, 5)];
        slo_step(&mut net, &grads, eta, &[c0, c1], 0.0).unwrap();
        for (l, c) in [c0, c1].into_iter().enumerate() {
            let moved = net.weight(l).unwrap().sub(&before[l]).unwrap().frob_norm();
            prop_assert!((moved - eta * c).abs() < 1e-12 * (1.0 + eta * c));
        }
    }

    #[test]
    fn adaptive_speeds_pick_the_weakest_layer(vals in proptest::collection::vec(proptest::option::of(-1.0f64..1.0), 1..6), s in 1.0f64..50.0) {
        let speeds = adaptive_speeds(&vals, s);
        prop_assert_eq!(speeds.len(), vals.len());
        prop_assert!(speeds.iter().all(|&c| c == s || c == 1.0 / s));
        if let Some(min) = vals.iter().flatten().cloned().reduce(f64::min) {
            let pick = vals.iter().position(|v| *v == Some(min)).unwrap();
            prop_assert_eq!(speeds[pick], s);
        }
    }

    #[test]
    fn loss_derivative_matches_difference(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = Rng::new(seed);
        let f: Vec<f64> = rng.normals(n, 1.0);
        let y: Vec<f64> = rng.normals(n, 1.0);
        let (loss, ldot) = mse_loss_and_ldot(&f, &y).unwrap();
        prop_assert!(loss >= 0.0);
        let h = 1e-6;
        let mut up = f.clone();
        up[0] += h;
        let mut down = f.clone();
        down[0] -= h;
        let fd = (mse_loss_and_ldot(&up, &y).unwrap().0 - mse_loss_and_ldot(&down, &y).unwrap().0) / (2.0 * h);
        prop_assert!((fd - ldot[0]).abs() < 1e-7);
    }

    #[test]
    fn datasets_are_deterministic(seed in any::<u64>(), gamma in 0.05f64..1.0) {
        let a = chain_monomial::<f64>(&mut Rng::new(seed), 20, 6, 4).unwrap();
        let b = chain_monomial::<f64>(&mut Rng::new(seed), 20, 6, 4).unwrap();
        prop_assert_eq!(&a.x, &b.x);
        prop_assert_eq!(&a.y, &b.y);
        let p = BalanceParams::with_gamma(gamma);
        let c = alignment_reversing::<f64>(&mut Rng::new(seed), 24, 5, &p).unwrap();
        let d = alignment_reversing::<f64>(&mut Rng::new(seed), 24, 5, &p).unwrap();
        prop_assert_eq!(&c.x, &d.x);
    }

    #[test]
    fn corruption_keeps_the_spectrum(seed in any::<u64>(), n in 2usize..8) {
        let g = gaussian(seed, n + 2, n);
        let k = g.gram();
        let q = corrupt_spectrum(&mut Rng::new(seed ^ 9), &k).unwrap();
        let (ek, eq) = (sym_eig(&k).unwrap().values, sym_eig(&q).unwrap().values);
        for (a, b) in ek.iter().zip(&eq) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn predicted_correlation_is_bounded_across_balance() {
    let rs = r_stats(32, 64, 4, 1).unwrap();
    for gamma in [0.05, 0.3, 0.7, 1.0] {
        let data = alignment_reversing::<f64>(&mut Rng::new(2), 64, 32, &BalanceParams::with_gamma(gamma)).unwrap();
        let ds = DataStats::new(&data.x, &data.y).unwrap();
        let p = predicted_correlation(&ds, &rs, Denom2Variant::Symmetric).correlation.unwrap();
        assert!((0.0..=1.0 + 1e-9).contains(&p), "gamma {gamma}: {p}");
    }
}

#[test]
fn single_precision_tracks_double() {
    let cfg = MlpConfig { widths: vec![6, 10, 10, 1], activation: Activation::Relu, init_scales: vec![1.0; 3], seed: 3 };
    let x = gaussian(4, 12, 6);
    let n64 = Mlp::<f64>::init(&cfg).unwrap();
    let n32 = Mlp::<f32>::init(&cfg).unwrap();
    let a64 = agop_factored(&n64, &x, 0).unwrap();
    let a32 = agop_factored(&n32, &x.cast::<f32>(), 0).unwrap().cast::<f64>();
    assert!(a64.sub(&a32).unwrap().frob_norm() / a64.frob_norm() < 1e-4);
}
