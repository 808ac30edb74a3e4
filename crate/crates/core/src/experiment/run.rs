//! Executes configurations and writes their artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::*;
use crate::datasets::{alignment_reversing, chain_monomial_egop, corrupt_spectrum, Dataset};
use crate::linalg::write_matrix_csv;
use crate::metrics::{eigen_dispersion, pearson_rho, rho, LayerAlignment};
use crate::network::{ptk_feature_cov, Mlp};
use crate::optim::{train, TrainLog};
use crate::theory::{
    first_order_prediction, mc_expected_ptk, observed_derivative_correlation, predicted_correlation, quadratic_r, quadratic_theory_config,
    DataStats, Denom2Variant, RStats,
};
use crate::{Error, Matrix, Result, Rng};

/// Stream ids under each seed.
const DATA_STREAM: u64 = 0;
const NET_STREAM: u64 = 1;
const CORRUPT_STREAM: u64 = 2;
/// Offset separating ensemble-net seeds from data seeds.
const ENSEMBLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// First-layer matrices at the end of a run.
#[derive(Clone, Debug)]
pub struct FeatureMatrices {
    pub nfm: Matrix<f64>,
    pub agop: Matrix<f64>,
    /// `W^T Q W` with `Q` sharing the spectrum of `K` but a random eigenbasis.
    pub corrupted: Matrix<f64>,
    /// Analytic target EGOP when the inputs are isotropic.
    pub egop: Option<Matrix<f64>>,
    pub correlations: MatrixCorrelations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCorrelations {
    pub nfm_agop: Option<f64>,
    pub nfm_corrupted: Option<f64>,
    pub nfm_egop: Option<f64>,
    pub agop_egop: Option<f64>,
    /// Pearson correlation of the diagonals.
    pub diag_nfm_agop: Option<f64>,
    pub diag_nfm_corrupted: Option<f64>,
    /// Eigenvalue std over mean of the feature covariance.
    pub k_dispersion: f64,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: String,
    pub first_scale: Option<f64>,
    pub optimizer: String,
    pub eta: f64,
    pub seed: u64,
    pub log: TrainLog,
    /// Set when training stopped early.
    pub error: Option<String>,
    pub matrices: Option<FeatureMatrices>,
}

impl CellOutcome {
    pub fn stem(&self) -> String {
        format!("{}__{}__seed{}", self.cell, self.optimizer, self.seed)
    }

    pub fn final_alignment(&self, layer: usize) -> Option<LayerAlignment> {
        self.log.last(layer).map(|r| r.alignment)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub gamma: f64,
    pub seed: u64,
    pub predicted: Option<f64>,
    pub predicted_as_printed: Option<f64>,
    pub observed: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderRow {
    pub task: FirstOrderTask,
    pub alpha: f64,
    pub seed: u64,
    pub predicted: Option<f64>,
    pub observed: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum RunOutput {
    Train(Vec<CellOutcome>),
    Balance(Vec<BalanceRow>),
    FirstOrder(Vec<FirstOrderRow>),
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub dir: PathBuf,
    pub output: RunOutput,
    pub files: Vec<PathBuf>,
}

fn cell_label(cell: Option<&InitCell>) -> String {
    cell.map_or_else(|| "base".to_string(), |c| format!("s0_{}", c.first_scale))
}

fn to_f64<T: crate::Scalar>(v: Option<T>) -> Option<f64> {
    v.map(crate::Scalar::to_f64_lossy)
}

/// Trains one (init cell, optimizer, seed) combination. Data and initial
/// weights depend only on the seed, so optimizers see identical starts.
pub fn run_train_cell(t: &TrainExperiment, cell: Option<&InitCell>, opt: &NamedOptimizer, seed: u64, hash: &str) -> Result<CellOutcome> {
    let all = t.data.generate(&mut Rng::stream(seed, DATA_STREAM), t.n_test)?;
    let n = t.data.n();
    let train_set = all.subset(&(0..n).collect::<Vec<_>>());
    let test_set: Option<Dataset<f64>> = (t.n_test > 0).then(|| all.subset(&(n..all.n()).collect::<Vec<_>>()));

    let mut model = t.model.clone();
    if let Some(c) = cell {
        model.init_scales[0] = c.first_scale;
    }
    let cfg = model.mlp_config(t.data.d(), seed);
    let mut net = Mlp::<f64>::init_with(&cfg, &mut Rng::stream(seed, NET_STREAM))?;
    if model.readout_scale != 1.0 {
        net.scale_layer(net.depth() - 1, model.readout_scale)?;
    }
    let mut spec = opt.optimizer.clone();
    if let Some(eta) = cell.and_then(|c| c.eta) {
        spec.eta = eta;
    }

    let mut outcome = CellOutcome {
        cell: cell_label(cell),
        first_scale: cell.map(|c| c.first_scale),
        optimizer: opt.label.clone(),
        eta: spec.eta,
        seed,
        log: TrainLog { seed, config_hash: hash.to_string(), ..TrainLog::default() },
        error: None,
        matrices: None,
    };
    match train(&mut net, &train_set, test_set.as_ref(), &spec, t.steps, t.measure_every) {
        Ok(mut log) => {
            log.seed = seed;
            log.config_hash = hash.to_string();
            outcome.log = log;
            if t.save_matrices {
                outcome.matrices = Some(feature_matrices(&net, &train_set, &t.data, seed)?);
            }
        }
        Err(e @ Error::Divergence { .. }) => outcome.error = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(outcome)
}

/// First-layer NFM, AGOP and the comparisons reported alongside them.
pub fn feature_matrices(net: &Mlp<f64>, data: &Dataset<f64>, spec: &DataSpec, seed: u64) -> Result<FeatureMatrices> {
    let w = net.weight(0)?;
    let k = ptk_feature_cov(net, &data.x, 0)?;
    let nfm = w.gram();
    let agop = w.sandwich(&k)?;
    let q = corrupt_spectrum(&mut Rng::stream(seed, CORRUPT_STREAM), &k)?;
    let corrupted = w.sandwich(&q)?;
    let egop = match spec {
        DataSpec::ChainMonomial { d, r, alpha: None, .. } => Some(chain_monomial_egop::<f64>(*d, *r)?),
        _ => None,
    };
    let diag = |m: &Matrix<f64>| Matrix::column_vector(&m.diag());
    let correlations = MatrixCorrelations {
        nfm_agop: rho(&nfm, &agop)?,
        nfm_corrupted: rho(&nfm, &corrupted)?,
        nfm_egop: egop.as_ref().map(|e| rho(&nfm, e)).transpose()?.flatten(),
        agop_egop: egop.as_ref().map(|e| rho(&agop, e)).transpose()?.flatten(),
        diag_nfm_agop: pearson_rho(&diag(&nfm), &diag(&agop))?,
        diag_nfm_corrupted: pearson_rho(&diag(&nfm), &diag(&corrupted))?,
        k_dispersion: eigen_dispersion(&k)?,
    };
    Ok(FeatureMatrices { nfm, agop, corrupted, egop, correlations })
}

/// Predicted and observed early centered alignment for one data seed,
/// averaging over `net_seeds` quadratic theory nets.
pub fn balance_point(b: &BalanceSweep, gamma: f64, seed: u64) -> Result<BalanceRow> {
    let data = alignment_reversing::<f64>(&mut Rng::stream(seed, DATA_STREAM), b.n, b.d, &b.params(gamma))?;
    let base = seed.wrapping_add(ENSEMBLE_SALT);
    let per_net: Vec<(RStats, Option<f64>)> = (0..b.net_seeds)
        .into_par_iter()
        .map(|i| {
            let net = Mlp::<f64>::init_with(&quadratic_theory_config(b.d, b.k, base), &mut Rng::stream(base, i as u64))?;
            let rs = RStats::from_matrix(&quadratic_r(&net)?)?;
            Ok((rs, observed_derivative_correlation(&net, &data.x, &data.y)?))
        })
        .collect::<Result<_>>()?;
    let rs = RStats::average(&per_net.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let ds = DataStats::new(&data.x, &data.y)?;
    let obs: Vec<f64> = per_net.iter().filter_map(|p| p.1).collect();
    Ok(BalanceRow {
        gamma,
        seed,
        predicted: predicted_correlation(&ds, &rs, Denom2Variant::Symmetric).correlation,
        predicted_as_printed: predicted_correlation(&ds, &rs, Denom2Variant::AsPrinted).correlation,
        observed: (obs.len() == per_net.len()).then(|| obs.iter().sum::<f64>() / obs.len() as f64),
    })
}

/// Observed first-layer derivative correlation of one net against the
/// prediction from Monte-Carlo expected kernels.
pub fn first_order_point(f: &FirstOrderSweep, task: FirstOrderTask, alpha: f64, seed: u64) -> Result<FirstOrderRow> {
    let data = f.data_spec(task, alpha).generate(&mut Rng::stream(seed, DATA_STREAM), 0)?;
    let net = Mlp::<f64>::init_with(&f.mlp_config(seed), &mut Rng::stream(seed, NET_STREAM))?;
    let observed = to_f64(observed_derivative_correlation(&net, &data.x, &data.y)?);
    let (t1, t2) = mc_expected_ptk(&f.mlp_config(seed.wrapping_add(ENSEMBLE_SALT)), &data.x, f.mc_seeds)?;
    let predicted = first_order_prediction(&t1, &t2, &data.x, &data.y)?;
    Ok(FirstOrderRow { task, alpha, seed, predicted, observed })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn write_record<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| Error::io(path, e.into()))
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Runs `config` into `out`, creating it if needed. Cells run in parallel on
/// the current rayon pool; outputs are ordered and byte-stable.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = config.hash();
    let mut files = Vec::new();
    let output = match &config.experiment {
        Experiment::Train(t) => {
            let cells: Vec<Option<&InitCell>> = if t.init_sweep.is_empty() { vec![None] } else { t.init_sweep.iter().map(Some).collect() };
            let mut jobs = Vec::new();
            for c in &cells {
                for o in &t.optimizers {
                    for &s in &config.seeds {
                        jobs.push((*c, o, s));
                    }
                }
            }
            let outcomes: Vec<CellOutcome> =
                jobs.par_iter().map(|(c, o, s)| run_train_cell(t, *c, o, *s, &hash)).collect::<Result<_>>()?;
            files.extend(write_train_artifacts(&outcomes, t.model.hidden.len() + 1, out)?);
            RunOutput::Train(outcomes)
        }
        Experiment::BalanceSweep(b) => {
            let jobs: Vec<(f64, u64)> = b.gammas.iter().flat_map(|&g| config.seeds.iter().map(move |&s| (g, s))).collect();
            let rows: Vec<BalanceRow> = jobs.par_iter().map(|&(g, s)| balance_point(b, g, s)).collect::<Result<_>>()?;
            files.extend(write_balance_artifacts(&rows, &b.gammas, out)?);
            RunOutput::Balance(rows)
        }
        Experiment::FirstOrderSweep(f) => {
            let mut jobs = Vec::new();
            for &task in &f.tasks {
                for &a in &f.alphas {
                    for &s in &config.seeds {
                        jobs.push((task, a, s));
                    }
                }
            }
            let rows: Vec<FirstOrderRow> = jobs.par_iter().map(|&(task, a, s)| first_order_point(f, task, a, s)).collect::<Result<_>>()?;
            let path = out.join("first_order.csv");
            let mut w = csv_writer(&path)?;
            write_record(&mut w, &path, ["task", "alpha", "seed", "predicted", "observed"])?;
            for r in &rows {
                let task = serde_json::to_value(r.task).expect("serializable");
                write_record(
                    &mut w,
                    &path,
                    [task.as_str().unwrap_or_default().to_string(), r.alpha.to_string(), r.seed.to_string(), opt_str(r.predicted), opt_str(r.observed)],
                )?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            files.push(path);
            RunOutput::FirstOrder(rows)
        }
    };

    let config_path = out.join("config.json");
    write_json(&config_path, config)?;
    files.push(config_path);
    let manifest_path = out.join("manifest.json");
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let rel: Vec<String> = files.iter().map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string()).collect();
    write_json(
        &manifest_path,
        &serde_json::json!({
            "name": config.name,
            "config_hash": hash,
            "version": env!("CARGO_PKG_VERSION"),
            "created_unix": created,
            "threads": rayon::current_num_threads(),
            "seeds": config.seeds,
            "files": rel,
        }),
    )?;
    files.push(manifest_path);
    Ok(RunReport { name: config.name.clone(), dir: out.to_path_buf(), output, files })
}

fn write_train_artifacts(outcomes: &[CellOutcome], depth: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let logs = out.join("logs");
    fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
    for o in outcomes {
        if o.error.is_none() {
            let p = logs.join(format!("{}.csv", o.stem()));
            o.log.write_csv(&p)?;
            files.push(p);
        }
    }

    let path = out.join("summary.csv");
    let mut w = csv_writer(&path)?;
    write_record(
        &mut w,
        &path,
        [
            "cell", "first_scale", "optimizer", "eta", "seed", "layer", "status", "final_step", "uc_nfa", "c_nfa", "dc_nfa", "ptk_c_nfa",
            "c_uc_ratio", "dc_ratio", "train_loss", "test_loss",
        ],
    )?;
    for o in outcomes {
        let status = o.error.clone().unwrap_or_else(|| "ok".into());
        for l in 0..depth {
            let last = o.log.last(l);
            let a = last.map(|r| r.alignment).unwrap_or_default();
            write_record(
                &mut w,
                &path,
                [
                    o.cell.clone(),
                    opt_str(o.first_scale),
                    o.optimizer.clone(),
                    o.eta.to_string(),
                    o.seed.to_string(),
                    l.to_string(),
                    status.clone(),
                    last.map(|r| r.step.to_string()).unwrap_or_default(),
                    opt_str(a.uc_nfa),
                    opt_str(a.c_nfa),
                    opt_str(a.dc_nfa),
                    opt_str(a.ptk_c_nfa),
                    opt_str(a.c_uc_ratio),
                    opt_str(a.dc_ratio),
                    opt_str(last.map(|r| r.train_loss)),
                    opt_str(last.and_then(|r| r.test_loss)),
                ],
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    files.push(path);

    if outcomes.iter().any(|o| o.matrices.is_some()) {
        let mut corr = Vec::new();
        for o in outcomes {
            let Some(m) = &o.matrices else { continue };
            let dir = out.join("matrices").join(o.stem());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut named = vec![("nfm", &m.nfm), ("agop", &m.agop), ("corrupted", &m.corrupted)];
            if let Some(e) = &m.egop {
                named.push(("egop", e));
            }
            for (name, mat) in named {
                let p = dir.join(format!("{name}.csv"));
                write_matrix_csv(mat, &p)?;
                files.push(p);
            }
            corr.push(serde_json::json!({
                "cell": o.cell, "optimizer": o.optimizer, "seed": o.seed, "correlations": m.correlations,
            }));
        }
        let p = out.join("correlations.json");
        write_json(&p, &corr)?;
        files.push(p);
    }
    Ok(files)
}

/// Per-gamma means over data seeds of `(predicted, observed)`.
pub fn balance_means(rows: &[BalanceRow], gammas: &[f64]) -> Vec<(f64, Option<f64>, Option<f64>)> {
    let mean = |v: Vec<Option<f64>>| -> Option<f64> {
        let n = v.len();
        let vals: Vec<f64> = v.into_iter().flatten().collect();
        (vals.len() == n && n > 0).then(|| vals.iter().sum::<f64>() / n as f64)
    };
    gammas
        .iter()
        .map(|&g| {
            let at: Vec<&BalanceRow> = rows.iter().filter(|r| r.gamma == g).collect();
            (g, mean(at.iter().map(|r| r.predicted).collect()), mean(at.iter().map(|r| r.observed).collect()))
        })
        .collect()
}

fn write_balance_artifacts(rows: &[BalanceRow], gammas: &[f64], out: &Path) -> Result<Vec<PathBuf>> {
    let path = out.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["gamma", "seed", "predicted", "observed", "predicted_as_printed"])?;
    for r in rows {
        write_record(
            &mut w,
            &path,
            [r.gamma.to_string(), r.seed.to_string(), opt_str(r.predicted), opt_str(r.observed), opt_str(r.predicted_as_printed)],
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mpath = out.join("sweep_mean.csv");
    let mut w = csv_writer(&mpath)?;
    write_record(&mut w, &mpath, ["gamma", "predicted", "observed", "abs_diff"])?;
    for (g, p, o) in balance_means(rows, gammas) {
        let diff = p.zip(o).map(|(p, o)| (p - o).abs());
        write_record(&mut w, &mpath, [g.to_string(), opt_str(p), opt_str(o), opt_str(diff)])?;
    }
    w.flush().map_err(|e| Error::io(&mpath, e))?;
    Ok(vec![path, mpath])
}
