//! Experiment configuration files (TOML).
//!
//! Unknown keys are rejected everywhere. Relative paths inside a config are
//! resolved against the config file's directory, and input paths must exist
//! when the config is loaded.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::hawkes::{HawkesFitConfig, HawkesParams};
use crate::mtpp::TrainConfig;
use crate::transfer::Component;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    SimulateHawkes,
    Fit,
    #[serde(alias = "imtpp")]
    FitImtpp,
    #[serde(alias = "hawkes")]
    FitHawkes,
    Transfer,
    Impute,
    Forecast,
    Evaluate,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Simulate,
        Task::SimulateHawkes,
        Task::Fit,
        Task::FitImtpp,
        Task::FitHawkes,
        Task::Transfer,
        Task::Impute,
        Task::Forecast,
        Task::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::SimulateHawkes => "simulate-hawkes",
            Task::Fit => "fit",
            Task::FitImtpp => "fit-imtpp",
            Task::FitHawkes => "fit-hawkes",
            Task::Transfer => "transfer",
            Task::Impute => "impute",
            Task::Forecast => "forecast",
            Task::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "imtpp" => "fit-imtpp",
            "hawkes" => "fit-hawkes",
            other => other,
        };
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// Where a dataset comes from: a file or a synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV or JSONL event file.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    /// Train/validation/test ratios.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// MCAR deletion fraction applied to every sequence after loading.
    #[serde(default)]
    pub deletion: f64,
    /// Ground-truth deleted events for already-thinned data in `path`.
    pub truth: Option<PathBuf>,
}

impl DataSection {
    pub fn from_path(path: PathBuf) -> Self {
        Self { path: Some(path), synthetic: None, split: default_split(), deletion: 0.0, truth: None }
    }

    fn check(&self, key: &str) -> Result<()> {
        match (&self.path, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config(format!("`{key}` sets both `path` and `synthetic`"))),
            (None, None) => return Err(Error::Config(format!("`{key}` needs `path` or `synthetic`"))),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.deletion) {
            return Err(Error::Config(format!("`{key}.deletion` must lie in [0, 1), got {}", self.deletion)));
        }
        if self.truth.is_some() && self.deletion > 0.0 {
            return Err(Error::Config(format!("`{key}` sets both `truth` and `deletion`")));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path, key: &str) -> Result<()> {
        if let Some(p) = self.path.take() {
            self.path = Some(existing(base, p, &format!("{key}.path"))?);
        }
        if let Some(p) = self.truth.take() {
            self.truth = Some(existing(base, p, &format!("{key}.truth"))?);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_emb: usize,
    pub d_in: usize,
    pub d_h: usize,
    /// Trained model for `impute`, `forecast` and `evaluate`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self { d_emb: e.d_emb, d_in: e.d_in, d_h: e.d_h, checkpoint: None }
    }
}

impl ModelSection {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig { d_emb: self.d_emb, d_in: self.d_in, d_h: self.d_h }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImtppSection {
    /// Cap on missing events per gap.
    pub max_count: Option<usize>,
    /// Prior over missing gaps; defaults to `LogNormal(ln(median gap / 2), 1)`.
    pub prior_mu: Option<f64>,
    pub prior_sigma2: Option<f64>,
    /// ELBO draws per sequence when reporting held-out values.
    pub eval_samples: usize,
}

impl Default for ImtppSection {
    fn default() -> Self {
        Self { max_count: None, prior_mu: None, prior_sigma2: None, eval_samples: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputeSection {
    pub samples_per_gap: usize,
}

impl Default for ImputeSection {
    fn default() -> Self {
        Self { samples_per_gap: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub prefix_len: usize,
    pub horizon: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { prefix_len: 10, horizon: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub source: DataSection,
    pub target: DataSection,
    #[serde(default = "default_lr_multiplier")]
    pub lr_multiplier: f64,
    #[serde(default)]
    pub freeze: Vec<Component>,
    #[serde(default = "default_target_epochs")]
    pub target_epochs: usize,
}

fn default_lr_multiplier() -> f64 {
    0.1
}

fn default_target_epochs() -> usize {
    20
}

/// `sizes.len()` blocks; `within` excitation between users of one block,
/// `across` between blocks, same baseline `mu` for everyone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub sizes: Vec<usize>,
    pub mu: f64,
    pub within: f64,
    pub across: f64,
}

impl BlockSpec {
    pub fn labels(&self) -> Vec<usize> {
        self.sizes.iter().enumerate().flat_map(|(b, &n)| std::iter::repeat_n(b, n)).collect()
    }

    pub fn params(&self, beta: f64) -> Result<HawkesParams> {
        let labels = self.labels();
        let u = labels.len();
        let a = DMatrix::from_fn(u, u, |i, j| if labels[i] == labels[j] { self.within } else { self.across });
        HawkesParams::new(vec![self.mu; u], a, beta)
    }
}

/// Ground-truth Hawkes process: explicit `mu`/`a`, a block structure, or a
/// params file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesTruth {
    pub mu: Option<Vec<f64>>,
    pub a: Option<Vec<Vec<f64>>>,
    pub blocks: Option<BlockSpec>,
    pub path: Option<PathBuf>,
    /// True community labels, for agreement scores. Implied by `blocks`.
    pub labels: Option<Vec<usize>>,
}

impl HawkesTruth {
    pub fn params(&self, beta: f64) -> Result<HawkesParams> {
        match (&self.mu, &self.a, &self.blocks, &self.path) {
            (Some(mu), Some(a), None, None) => HawkesParams::from_rows(mu.clone(), a, beta),
            (None, None, Some(b), None) => b.params(beta),
            (None, None, None, Some(p)) => {
                let f = std::fs::File::open(p)?;
                HawkesParams::read_from(std::io::BufReader::new(f))
            }
            _ => Err(Error::Config("`hawkes.truth` needs exactly one of `mu` + `a`, `blocks` or `path`".into())),
        }
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.labels.clone().or_else(|| self.blocks.as_ref().map(BlockSpec::labels))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HawkesFitSection {
    pub steps: usize,
    pub lr: f64,
    pub init_a: f64,
}

impl Default for HawkesFitSection {
    fn default() -> Self {
        let d = HawkesFitConfig::default();
        Self { steps: d.steps, lr: d.lr, init_a: d.init_a }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesSection {
    /// Observation window `[0, horizon]` of every sequence.
    pub horizon: f64,
    /// Sequences to simulate from `truth`.
    #[serde(default = "default_hawkes_sequences")]
    pub sequences: usize,
    /// User count of file data; taken from `truth` otherwise.
    pub users: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Number of communities to assign after fitting.
    pub communities: Option<usize>,
    pub truth: Option<HawkesTruth>,
    #[serde(default)]
    pub fit: HawkesFitSection,
}

fn default_hawkes_sequences() -> usize {
    50
}

fn default_beta() -> f64 {
    1.0
}

/// Command-line overrides, applied after loading.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub freeze: Option<Vec<Component>>,
    pub lr_mult: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; when present it must match the subcommand.
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `runs/<task>` under the working directory if unset.
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    /// `train.seed` is ignored: training seeds derive from `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub imtpp: ImtppSection,
    #[serde(default)]
    pub impute: ImputeSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    pub transfer: Option<TransferSection>,
    pub hawkes: Option<HawkesSection>,
}

fn existing(base: &Path, p: PathBuf, key: &str) -> Result<PathBuf> {
    let full = if p.is_absolute() { p } else { base.join(p) };
    if !full.exists() {
        return Err(Error::Config(format!("`{key}`: {} does not exist", full.display())));
    }
    Ok(full)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and resolves paths relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve(&base)?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) -> Result<()> {
        if let Some(d) = &mut self.data {
            d.resolve(base, "data")?;
        }
        if let Some(t) = &mut self.transfer {
            t.source.resolve(base, "transfer.source")?;
            t.target.resolve(base, "transfer.target")?;
        }
        if let Some(p) = self.model.checkpoint.take() {
            self.model.checkpoint = Some(existing(base, p, "model.checkpoint")?);
        }
        if let Some(t) = self.hawkes.as_mut().and_then(|h| h.truth.as_mut()) {
            if let Some(p) = t.path.take() {
                t.path = Some(existing(base, p, "hawkes.truth.path")?);
            }
        }
        if let Some(o) = self.out.take() {
            self.out = Some(if o.is_absolute() { o } else { base.join(o) });
        }
        Ok(())
    }

    /// Applies command-line overrides. Paths given here are taken as is.
    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = o.out {
            self.out = Some(out);
        }
        let touches_transfer = o.source.is_some() || o.target.is_some() || o.freeze.is_some() || o.lr_mult.is_some();
        if touches_transfer && self.transfer.is_none() {
            if o.source.is_none() || o.target.is_none() {
                return Err(Error::Config("no `transfer` section; pass both --source and --target".into()));
            }
            self.transfer = Some(TransferSection {
                source: DataSection::from_path(PathBuf::new()),
                target: DataSection::from_path(PathBuf::new()),
                lr_multiplier: default_lr_multiplier(),
                freeze: Vec::new(),
                target_epochs: default_target_epochs(),
            });
        }
        if let Some(t) = &mut self.transfer {
            for (given, section, key) in [(o.source, &mut t.source, "--source"), (o.target, &mut t.target, "--target")] {
                if let Some(p) = given {
                    section.path = Some(existing(Path::new(""), p, key)?);
                    section.synthetic = None;
                }
            }
            if let Some(f) = o.freeze {
                t.freeze = f;
            }
            if let Some(m) = o.lr_mult {
                t.lr_multiplier = m;
            }
        }
        Ok(())
    }

    /// Checks that the sections `task` needs are present and consistent.
    pub fn check_for(&self, task: Task) -> Result<()> {
        if let Some(t) = self.task {
            if t != task {
                return Err(Error::Config(format!("config is for task `{t}`, not `{task}`")));
            }
        }
        self.train.validate()?;
        let data = |key: &str| -> Result<&DataSection> {
            let d = self.data.as_ref().ok_or_else(|| Error::Config(format!("task `{task}` needs a `{key}` section")))?;
            d.check(key)?;
            Ok(d)
        };
        let hawkes = || self.hawkes.as_ref().ok_or_else(|| Error::Config(format!("task `{task}` needs a `hawkes` section")));
        let checkpoint = || {
            self.model
                .checkpoint
                .as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::Config(format!("task `{task}` needs `model.checkpoint`")))
        };
        match task {
            Task::Simulate => {
                if data("data")?.synthetic.is_none() {
                    return Err(Error::Config("`simulate` needs `data.synthetic`".into()));
                }
            }
            Task::Fit | Task::FitImtpp => {
                data("data")?;
            }
            Task::SimulateHawkes => {
                let h = hawkes()?;
                if h.truth.is_none() {
                    return Err(Error::Config("`simulate-hawkes` needs `hawkes.truth`".into()));
                }
            }
            Task::FitHawkes => {
                let h = hawkes()?;
                match (&self.data, &h.truth) {
                    (Some(d), _) => {
                        d.check("data")?;
                        if d.path.is_none() {
                            return Err(Error::Config("Hawkes data must come from `data.path` or `hawkes.truth`".into()));
                        }
                        if h.users.is_none() && h.truth.is_none() {
                            return Err(Error::Config("file data needs `hawkes.users`".into()));
                        }
                    }
                    (None, None) => return Err(Error::Config("`fit-hawkes` needs `data.path` or `hawkes.truth`".into())),
                    (None, Some(_)) => {}
                }
            }
            Task::Transfer => {
                let t = self.transfer.as_ref().ok_or_else(|| Error::Config("`transfer` needs a `transfer` section".into()))?;
                t.source.check("transfer.source")?;
                t.target.check("transfer.target")?;
            }
            Task::Impute | Task::Forecast | Task::Evaluate => {
                checkpoint()?;
                data("data")?;
            }
        }
        Ok(())
    }

    pub fn out_dir(&self, task: Task) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(task.name()))
    }

    pub fn hawkes_fit(&self, beta: f64, seed: u64) -> HawkesFitConfig {
        let f = self.hawkes.as_ref().map(|h| h.fit.clone()).unwrap_or_default();
        HawkesFitConfig { beta, steps: f.steps, lr: f.lr, init_a: f.init_a, seed }
    }
}
