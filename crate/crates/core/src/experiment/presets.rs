//! Built-in experiment configurations at desk scale.

use super::config::*;
use crate::network::Activation;
use crate::optim::OptimizerSpec;
use crate::{Error, Result};

/// Name and one-line description of every preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", "chain monomial r=5, small first-layer init: final NFM, AGOP, corrupted AGOP and EGOP"),
    ("fig2", "uncentered and centered alignment over training for four first-layer init scales"),
    ("fig3", "alignment-reversing balance sweep: predicted vs observed early centered alignment"),
    ("fig4", "fixed layerwise speeds vs gradient descent across first-layer init scales"),
    ("fig5", "final first-layer NFM with and without fixed speeds across init scales"),
    ("appB", "double-centered ratio and kernel-centered alignment on two input spectra"),
    ("appC", "first-order prediction from expected kernels across input spectrum decay"),
    ("appF", "centered alignment over training on two decaying input spectra"),
    ("appI", "adaptive layerwise speeds vs gradient descent, three hidden layers"),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

fn gd(eta: f64) -> NamedOptimizer {
    NamedOptimizer { label: "gd".into(), optimizer: OptimizerSpec::gd(eta) }
}

fn relu(hidden: Vec<usize>, init_scales: Vec<f64>) -> ModelSpec {
    ModelSpec { hidden, activation: Activation::Relu, init_scales, readout_scale: 1.0 }
}

fn first_scales(scales: &[f64]) -> Vec<InitCell> {
    scales.iter().map(|&s| InitCell { first_scale: s, eta: None }).collect()
}

const INIT_SWEEP: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

fn chain(n: usize, d: usize, r: usize, alpha: Option<f64>) -> DataSpec {
    DataSpec::ChainMonomial { n, d, r, alpha }
}

fn training_curves(name: &str, alpha: Option<f64>, scales: &[f64], seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        seeds,
        experiment: Experiment::Train(TrainExperiment {
            data: chain(256, 32, 5, alpha),
            n_test: 256,
            model: relu(vec![256, 256], vec![1.0; 3]),
            optimizers: vec![gd(0.05)],
            init_sweep: first_scales(scales),
            steps: 800,
            measure_every: 5,
            save_matrices: false,
        }),
    }
}

fn speed_fixing(name: &str, save_matrices: bool, measure_every: usize) -> ExperimentConfig {
    let etas = [0.03, 0.1, 0.2, 0.4];
    ExperimentConfig {
        name: name.into(),
        seeds: vec![0],
        experiment: Experiment::Train(TrainExperiment {
            data: chain(256, 32, 5, None),
            n_test: 256,
            model: ModelSpec { readout_scale: 0.01, ..relu(vec![256, 256], vec![1.0; 3]) },
            optimizers: vec![
                gd(0.05),
                NamedOptimizer { label: "slo".into(), optimizer: OptimizerSpec::slo(0.05, vec![500.0, 0.002, 0.002], 0.1) },
            ],
            init_sweep: INIT_SWEEP.iter().zip(etas).map(|(&s, e)| InitCell { first_scale: s, eta: Some(e) }).collect(),
            steps: 600,
            measure_every,
            save_matrices,
        }),
    }
}

/// Evenly spaced grid of `points` values from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Configurations making up a preset, in run order.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let cfgs = match name {
        "fig1" => vec![ExperimentConfig {
            name: "fig1".into(),
            seeds: (0..5).collect(),
            experiment: Experiment::Train(TrainExperiment {
                data: chain(384, 32, 5, None),
                n_test: 0,
                model: relu(vec![128, 128], vec![0.01, 1.0, 1.0]),
                optimizers: vec![gd(0.05)],
                init_sweep: Vec::new(),
                steps: 800,
                measure_every: 5,
                save_matrices: true,
            }),
        }],
        "fig2" => vec![training_curves("fig2", None, &INIT_SWEEP, vec![0, 1, 2])],
        "fig3" => vec![ExperimentConfig {
            name: "fig3".into(),
            seeds: vec![0, 1, 2, 3],
            experiment: Experiment::BalanceSweep(BalanceSweep {
                n: 256,
                d: 256,
                k: 256,
                gammas: linspace(0.05, 1.0, 8),
                net_seeds: 30,
                eps1: 0.5,
                eps2: 1e-2,
                label_shift: 1e-5,
            }),
        }],
        "fig4" => vec![speed_fixing("fig4", false, 5)],
        "fig5" => vec![speed_fixing("fig5", true, 50)],
        "appB" => vec![
            training_curves("appB_alpha1", Some(1.0), &[1.0, 0.01], vec![0]),
            training_curves("appB_alpha2", Some(2.0), &[1.0, 0.01], vec![0]),
        ],
        "appC" => vec![ExperimentConfig {
            name: "appC".into(),
            seeds: vec![0, 1],
            experiment: Experiment::FirstOrderSweep(FirstOrderSweep {
                n: 128,
                d: 128,
                k: 128,
                hidden_layers: 2,
                activation: Activation::Relu,
                init_scale: 1.0,
                alphas: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
                tasks: vec![FirstOrderTask::ChainMonomial, FirstOrderTask::QuadraticForm],
                rank: 5,
                mc_seeds: 50,
            }),
        }],
        "appF" => vec![
            training_curves("appF_alpha1", Some(1.0), &INIT_SWEEP, vec![0]),
            training_curves("appF_alpha2", Some(2.0), &INIT_SWEEP, vec![0]),
        ],
        "appI" => vec![ExperimentConfig {
            name: "appI".into(),
            seeds: vec![0],
            experiment: Experiment::Train(TrainExperiment {
                data: chain(256, 32, 3, None),
                n_test: 256,
                model: relu(vec![256, 256, 256], vec![0.1, 1.0, 1.0, 1.0]),
                optimizers: vec![
                    NamedOptimizer { label: "adaptive_slo".into(), optimizer: OptimizerSpec::adaptive_slo(0.05, 20.0, 0.01) },
                    gd(0.25),
                ],
                init_sweep: Vec::new(),
                steps: 500,
                measure_every: 5,
                save_matrices: false,
            }),
        }],
        other => {
            return Err(Error::Config(format!("unknown preset `{other}`; available: {}", preset_names().join(", "))));
        }
    };
    Ok(cfgs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in preset_names() {
            for c in preset(name).unwrap() {
                c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }

    #[test]
    fn unknown_preset_lists_alternatives() {
        let e = preset("fig9").unwrap_err().to_string();
        assert!(e.contains("fig1") && e.contains("appI"), "{e}");
    }

    #[test]
    fn grid() {
        let g = linspace(0.05, 1.0, 8);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.05);
        assert!((g[7] - 1.0).abs() < 1e-15);
    }
}
