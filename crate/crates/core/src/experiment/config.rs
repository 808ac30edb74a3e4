use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{chain_monomial_on, gaussian_decay, standardize, BalanceParams, Dataset, DatasetMeta};
use crate::linalg::random_gaussian;
use crate::network::{Activation, MlpConfig};
use crate::optim::OptimizerSpec;
use crate::{Error, Matrix, Result, Rng};

/// Environment variable that replaces the seed list with a single seed.
pub const SEED_ENV: &str = "NFA_LAB_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Train(TrainExperiment),
    BalanceSweep(BalanceSweep),
    FirstOrderSweep(FirstOrderSweep),
}

/// Input distribution and target for training runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Product of `r` cyclically chained coordinate pairs.
    ChainMonomial {
        n: usize,
        d: usize,
        r: usize,
        /// Input spectrum decay; isotropic when absent.
        #[serde(default)]
        alpha: Option<f64>,
    },
    /// `sum_i (Q x)_i^2` with a Gaussian `Q`.
    QuadraticForm {
        n: usize,
        d: usize,
        #[serde(default)]
        alpha: Option<f64>,
    },
}

impl DataSpec {
    pub fn n(&self) -> usize {
        match self {
            DataSpec::ChainMonomial { n, .. } | DataSpec::QuadraticForm { n, .. } => *n,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            DataSpec::ChainMonomial { d, .. } | DataSpec::QuadraticForm { d, .. } => *d,
        }
    }

    fn alpha(&self) -> Option<f64> {
        match self {
            DataSpec::ChainMonomial { alpha, .. } | DataSpec::QuadraticForm { alpha, .. } => *alpha,
        }
    }

    fn set_scale(&mut self, new_n: Option<usize>, new_d: Option<usize>) {
        let (n, d) = match self {
            DataSpec::ChainMonomial { n, d, .. } | DataSpec::QuadraticForm { n, d, .. } => (n, d),
        };
        if let Some(v) = new_n {
            *n = v;
        }
        if let Some(v) = new_d {
            *d = v;
        }
    }

    /// Draws `n + extra` rows; every row shares the input covariance and target.
    pub fn generate(&self, rng: &mut Rng, extra: usize) -> Result<Dataset<f64>> {
        let rows = self.n() + extra;
        let d = self.d();
        let x: Matrix<f64> = match self.alpha() {
            Some(a) => gaussian_decay(rng, rows, d, a)?,
            None => random_gaussian(rng, rows, d, 1.0),
        };
        let meta = DatasetMeta {
            generator: match self {
                DataSpec::ChainMonomial { .. } => "chain_monomial",
                DataSpec::QuadraticForm { .. } => "quadratic_form",
            }
            .into(),
            seed: Some(rng.seed()),
            params: serde_json::to_value(self).expect("serializable"),
        };
        match self {
            DataSpec::ChainMonomial { r, .. } => chain_monomial_on(x, *r, meta),
            DataSpec::QuadraticForm { .. } => {
                let q: Matrix<f64> = random_gaussian(rng, d, d, 1.0);
                let qx = x.matmul_nt(&q)?;
                let mut y: Vec<f64> = (0..rows).map(|a| qx.row(a).iter().map(|v| v * v).sum()).collect();
                standardize(&mut y)?;
                Dataset::new(x, y, meta)
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// One variance multiplier per weight matrix.
    pub init_scales: Vec<f64>,
    /// Multiplies the readout weights right after initialization.
    #[serde(default = "one")]
    pub readout_scale: f64,
}

impl ModelSpec {
    pub fn mlp_config(&self, d: usize, seed: u64) -> MlpConfig {
        let mut widths = vec![d];
        widths.extend(&self.hidden);
        widths.push(1);
        MlpConfig { widths, activation: self.activation, init_scales: self.init_scales.clone(), seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOptimizer {
    pub label: String,
    pub optimizer: OptimizerSpec,
}

/// One first-layer initialization scale, optionally with its own learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitCell {
    pub first_scale: f64,
    #[serde(default)]
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperiment {
    pub data: DataSpec,
    /// Extra rows drawn from the same distribution for the test loss.
    #[serde(default)]
    pub n_test: usize,
    pub model: ModelSpec,
    pub optimizers: Vec<NamedOptimizer>,
    /// Empty means a single cell using `model.init_scales` as given.
    #[serde(default)]
    pub init_sweep: Vec<InitCell>,
    pub steps: usize,
    pub measure_every: usize,
    /// Also write first-layer NFM, AGOP, corrupted AGOP and target EGOP.
    #[serde(default)]
    pub save_matrices: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSweep {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub gammas: Vec<f64>,
    /// Nets averaged per data seed for both the trace moments and the observation.
    pub net_seeds: usize,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "default_shift")]
    pub label_shift: f64,
}

fn default_eps1() -> f64 {
    BalanceParams::with_gamma(1.0).eps1
}
fn default_eps2() -> f64 {
    BalanceParams::with_gamma(1.0).eps2
}
fn default_shift() -> f64 {
    BalanceParams::with_gamma(1.0).label_shift
}

impl BalanceSweep {
    pub fn params(&self, gamma: f64) -> BalanceParams {
        BalanceParams { gamma, eps1: self.eps1, eps2: self.eps2, label_shift: self.label_shift }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrderTask {
    ChainMonomial,
    QuadraticForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderSweep {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    #[serde(default = "one")]
    pub init_scale: f64,
    pub alphas: Vec<f64>,
    pub tasks: Vec<FirstOrderTask>,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Nets drawn to estimate the expected kernels.
    pub mc_seeds: usize,
}

fn default_rank() -> usize {
    5
}

impl FirstOrderSweep {
    pub fn data_spec(&self, task: FirstOrderTask, alpha: f64) -> DataSpec {
        let alpha = Some(alpha);
        match task {
            FirstOrderTask::ChainMonomial => DataSpec::ChainMonomial { n: self.n, d: self.d, r: self.rank, alpha },
            FirstOrderTask::QuadraticForm => DataSpec::QuadraticForm { n: self.n, d: self.d, alpha },
        }
    }

    pub fn mlp_config(&self, seed: u64) -> MlpConfig {
        let mut widths = vec![self.d];
        widths.extend(std::iter::repeat_n(self.k, self.hidden_layers));
        widths.push(1);
        MlpConfig { widths, activation: self.activation, init_scales: vec![self.init_scale; self.hidden_layers + 1], seed }
    }
}

/// Replacement sample count, input dimension and width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleOverrides {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
}

impl ScaleOverrides {
    /// Parses `n=256,k=256,d=256`; any subset of keys.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = ScaleOverrides::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("scale override `{part}` is not key=value")))?;
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("scale override `{part}` needs a positive integer")))?;
            if v == 0 {
                return Err(Error::Config(format!("scale override `{part}` must be positive")));
            }
            match key.trim() {
                "n" => out.n = Some(v),
                "d" => out.d = Some(v),
                "k" => out.k = Some(v),
                other => return Err(Error::Config(format!("unknown scale key `{other}` (expected n, d or k)"))),
            }
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_none() && self.d.is_none() && self.k.is_none()
    }
}

impl ExperimentConfig {
    pub fn apply_scale(&mut self, s: &ScaleOverrides) {
        match &mut self.experiment {
            Experiment::Train(t) => {
                t.data.set_scale(s.n, s.d);
                if let Some(k) = s.k {
                    t.model.hidden.iter_mut().for_each(|w| *w = k);
                }
            }
            Experiment::BalanceSweep(b) => {
                b.n = s.n.unwrap_or(b.n);
                b.d = s.d.unwrap_or(b.d);
                b.k = s.k.unwrap_or(b.k);
            }
            Experiment::FirstOrderSweep(f) => {
                f.n = s.n.unwrap_or(f.n);
                f.d = s.d.unwrap_or(f.d);
                f.k = s.k.unwrap_or(f.k);
            }
        }
    }

    /// Replaces the seed list when the override variable holds a number.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name)));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        match &self.experiment {
            Experiment::Train(t) => {
                let depth = t.model.hidden.len() + 1;
                if t.model.hidden.is_empty() {
                    return bad("model.hidden needs at least one layer".into());
                }
                if t.model.init_scales.len() != depth {
                    return bad(format!("model.init_scales needs {depth} entries, got {}", t.model.init_scales.len()));
                }
                if !(t.model.readout_scale.is_finite() && t.model.readout_scale != 0.0) {
                    return bad("model.readout_scale must be finite and nonzero".into());
                }
                if t.optimizers.is_empty() {
                    return bad("optimizers must not be empty".into());
                }
                for o in &t.optimizers {
                    o.optimizer.validate(depth).map_err(|e| Error::Config(format!("{}: optimizer {}: {e}", self.name, o.label)))?;
                }
                if t.measure_every == 0 {
                    return bad("measure_every must be positive".into());
                }
                if t.data.n() == 0 || t.data.d() == 0 {
                    return bad("data.n and data.d must be positive".into());
                }
                if let DataSpec::ChainMonomial { d, r, .. } = t.data {
                    if r < 3 || r > d {
                        return bad(format!("chain rank {r} must lie in [3, d={d}]"));
                    }
                }
                if t.init_sweep.iter().any(|c| c.first_scale.is_nan() || c.first_scale <= 0.0 || c.eta.is_some_and(|e| e.is_nan() || e <= 0.0)) {
                    return bad("init_sweep scales and learning rates must be positive".into());
                }
                t.model.mlp_config(t.data.d(), 0).validate().map_err(|e| Error::Config(format!("{}: model: {e}", self.name)))
            }
            Experiment::BalanceSweep(b) => {
                if b.n == 0 || b.d == 0 || b.k == 0 || b.net_seeds == 0 {
                    return bad("n, d, k and net_seeds must be positive".into());
                }
                if b.gammas.is_empty() {
                    return bad("gammas must not be empty".into());
                }
                for &g in &b.gammas {
                    b.params(g).validate().map_err(|e| Error::Config(format!("{}: {e}", self.name)))?;
                }
                Ok(())
            }
            Experiment::FirstOrderSweep(f) => {
                if f.n == 0 || f.d == 0 || f.k == 0 || f.hidden_layers == 0 || f.mc_seeds == 0 {
                    return bad("n, d, k, hidden_layers and mc_seeds must be positive".into());
                }
                if f.alphas.is_empty() || f.tasks.is_empty() {
                    return bad("alphas and tasks must not be empty".into());
                }
                if f.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                    return bad("alphas must be finite and nonnegative".into());
                }
                if f.tasks.contains(&FirstOrderTask::ChainMonomial) && (f.rank < 3 || f.rank > f.d) {
                    return bad(format!("chain rank {} must lie in [3, d={}]", f.rank, f.d));
                }
                Ok(())
            }
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses JSON, or TOML when the path ends in `.toml`; field errors name
    /// the offending path.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg = if toml { Self::from_toml_str(&text) } else { Self::from_json_str(&text) };
        cfg.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            let mut at = e.path().to_string();
            let mut msg = inner.to_string();
            if let Some((p, m)) = serde_json::from_str(text).ok().and_then(|v| variant_error(&v, &at)) {
                (at, msg) = (p, m);
            }
            let field = if at == "." { String::new() } else { format!("field `{at}`: ") };
            Error::Config(format!("line {} column {}: {field}{msg}", inner.line(), inner.column()))
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            let refined = toml::from_str::<serde_json::Value>(text).ok().and_then(|v| variant_error(&v, &at));
            let (at, msg) = refined.unwrap_or_else(|| (at, e.inner().to_string()));
            Error::Config(format!("field `{at}`: {msg}"))
        })
    }
}

/// Tagged enums buffer their body, which hides the failing field. Decode the
/// variant body on its own to recover the full path.
fn variant_error(root: &serde_json::Value, at: &str) -> Option<(String, String)> {
    if at != "experiment" {
        return None;
    }
    let mut body = root.get("experiment")?.as_object()?.clone();
    let kind = body.remove("kind")?;
    let body = serde_json::Value::Object(body);
    fn decode<S: serde::de::DeserializeOwned>(v: serde_json::Value) -> Option<(String, String)> {
        let e = serde_path_to_error::deserialize::<_, S>(v).err()?;
        let path = e.path().to_string();
        let at = if path == "." { "experiment".to_string() } else { format!("experiment.{path}") };
        Some((at, e.into_inner().to_string()))
    }
    match kind.as_str()? {
        "train" => decode::<TrainExperiment>(body),
        "balance_sweep" => decode::<BalanceSweep>(body),
        "first_order_sweep" => decode::<FirstOrderSweep>(body),
        _ => None,
    }
}
