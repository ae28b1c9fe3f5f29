//! Config-driven experiment runner.
//!
//! An [`ExperimentConfig`] is a JSON document:
//!
//! ```json
//! {
//!   "name": "mog10",
//!   "seed": 0,
//!   "out_dir": "out/mog10",
//!   "threads": 1,
//!   "dataset": {"spec": {"kind": "mog_nd", "dim": 10}, "n": 50000},
//!   "schedule": {"schedule": "vp", "beta_min": 0.1, "beta_max": 20.0},
//!   "models": [{"label": "w500", "hidden": [500, 500], "activation": "tanh",
//!               "skip": "none", "t_split": null, "high_noise_only": false}],
//!   "train": {"lr": 0.005, "batch_size": 2000, "iterations": 10000},
//!   "samplers": [{"sampler": "ode", "steps": 100}, {"sampler": "sde"}],
//!   "n_samples": 2000,
//!   "tid": {"epsilons": [0.02, 0.05], "subset": 2000},
//!   "diagnostics": {"mae_times": [1.0, 0.1]},
//!   "seesaw": {"p_max": 20},
//!   "plots": true
//! }
//! ```
//!
//! Every random draw is derived from the global `seed`; the per-stage seeds
//! are listed in `manifest.json`.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{gen_dataset, Dataset, DatasetSpec};
use crate::diagnostics::{density_evolution, error_covariance, velocity_grid, velocity_mae};
use crate::error::{Error, Result};
use crate::mog::MogSpec;
use crate::plot::{heatmap, line_chart, scatter_chart, Series};
use crate::rng::Seed;
use crate::samplers::{run_sampler_with, RunOptions, SamplerConfig, SamplerKind};
use crate::schedule::NoiseSchedule;
use crate::scorenet::{
    load_checkpoint, save_checkpoint, train, train_two_model, write_loss_csv, Activation, Architecture,
    Checkpoint, ScoreModel, ScoreNet, SkipMode, TrainConfig, T_MIN,
};
use crate::seesaw::{seesaw_table, write_seesaw_csv, P_MAX};
use crate::source::ScoreSource;
use crate::tid::{
    draw_subset, neighbor_counts, tail_ccdf, tail_index, tid_report, write_ccdf_csv, TidConvention,
    TidOptions, DEFAULT_SUBSET,
};

const LOCK_FILE: &str = ".lock";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub spec: DatasetSpec,
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    50_000
}

/// One model to train (or the analytic oracle, for mixture datasets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub label: String,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub skip: SkipMode,
    /// Train separate low/high noise networks split at this time.
    #[serde(default)]
    pub t_split: Option<f64>,
    #[serde(default)]
    pub high_noise_only: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl ModelSpec {
    pub fn net(label: impl Into<String>, arch: &Architecture) -> Self {
        ModelSpec {
            label: label.into(),
            oracle: false,
            hidden: arch.hidden.clone(),
            activation: arch.activation,
            skip: arch.skip,
            t_split: None,
            high_noise_only: false,
        }
    }

    pub fn oracle(label: impl Into<String>) -> Self {
        ModelSpec {
            oracle: true,
            ..ModelSpec::net(label, &Architecture::two_layer_tanh(1))
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.hidden.clone(), self.activation, self.skip)
    }

    fn width(&self) -> Option<usize> {
        (!self.oracle).then(|| self.hidden.first().copied()).flatten()
    }
}

/// Training hyperparameters; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub t_range: [f64; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            batch_size: d.batch_size,
            iterations: d.iterations,
            t_range: d.t_range,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: Seed) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            iterations: self.iterations,
            t_range: self.t_range,
            seed,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidSection {
    pub epsilons: Vec<f64>,
    #[serde(default = "default_subset")]
    pub subset: usize,
    /// Measure distances along this coordinate only.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub tid_convention: TidConvention,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Also export neighbor-count CCDFs at the first radius.
    #[serde(default)]
    pub ccdf: bool,
}

fn default_subset() -> usize {
    DEFAULT_SUBSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrCovSection {
    #[serde(default = "default_errcov_samplers")]
    pub samplers: Vec<SamplerKind>,
    #[serde(default = "default_errcov_steps")]
    pub steps: usize,
    #[serde(default = "default_errcov_chains")]
    pub chains: usize,
}

fn default_errcov_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Ode, SamplerKind::Sde]
}
fn default_errcov_steps() -> usize {
    100
}
fn default_errcov_chains() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySection {
    #[serde(default = "default_density_run")]
    pub run: SamplerConfig,
    #[serde(default = "default_density_chains")]
    pub chains: usize,
    #[serde(default)]
    pub dim: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_range")]
    pub range: [f64; 2],
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_density_run() -> SamplerConfig {
    SamplerConfig::ode()
}
fn default_density_chains() -> usize {
    10_000
}
fn default_bins() -> usize {
    60
}
fn default_range() -> [f64; 2] {
    [-3.0, 3.0]
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    #[serde(default)]
    pub dim: usize,
    #[serde(default = "default_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_t_range")]
    pub t_range: [f64; 2],
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_nt")]
    pub nt: usize,
}

fn default_t_range() -> [f64; 2] {
    [T_MIN, 1.0]
}
fn default_nx() -> usize {
    61
}
fn default_nt() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    /// Times at which the velocity MAE against the oracle is reported.
    #[serde(default)]
    pub mae_times: Vec<f64>,
    #[serde(default = "default_mae_points")]
    pub mae_points: usize,
    #[serde(default)]
    pub error_covariance: Option<ErrCovSection>,
    #[serde(default)]
    pub density: Option<DensitySection>,
    #[serde(default)]
    pub velocity_grid: Option<GridSection>,
}

fn default_mae_points() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeesawSection {
    #[serde(default = "default_p_max")]
    pub p_max: usize,
}

fn default_p_max() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: Seed,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
    pub dataset: DataConfig,
    pub schedule: NoiseSchedule,
    pub models: Vec<ModelSpec>,
    pub train: TrainSection,
    pub samplers: Vec<SamplerConfig>,
    pub n_samples: usize,
    /// Record sampler trajectories, keeping every `stride`-th state.
    pub trajectory_stride: Option<usize>,
    pub tid: Option<TidSection>,
    pub diagnostics: Option<DiagnosticsSection>,
    pub seesaw: Option<SeesawSection>,
    pub plots: bool,
}

impl ExperimentConfig {
    /// A config with only a dataset; every optional section is off.
    pub fn new(spec: DatasetSpec, n: usize) -> Self {
        ExperimentConfig {
            name: String::new(),
            seed: Seed(0),
            out_dir: None,
            threads: 1,
            dataset: DataConfig { spec, n },
            schedule: NoiseSchedule::default(),
            models: Vec::new(),
            train: TrainSection::default(),
            samplers: Vec::new(),
            n_samples: 2000,
            trajectory_stride: None,
            tid: None,
            diagnostics: None,
            seesaw: None,
            plots: true,
        }
    }

    /// Parse and validate. Every problem found is reported, keyed by its path.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(vec![format!("<root>: invalid JSON: {e}")]))?;
        let Value::Object(obj) = root else {
            return Err(Error::Config(vec!["<root>: expected a JSON object".into()]));
        };
        let mut probs = Vec::new();
        let mut cfg = ExperimentConfig::new(DatasetSpec::Chessboard, default_n());
        let mut have_dataset = false;
        for (key, v) in &obj {
            let p = &mut probs;
            match key.as_str() {
                "name" => set(&mut cfg.name, take(key, v, p)),
                "seed" => set(&mut cfg.seed, take(key, v, p)),
                "out_dir" => set(&mut cfg.out_dir, take(key, v, p)),
                "threads" => set(&mut cfg.threads, take(key, v, p)),
                "dataset" => {
                    have_dataset = true;
                    set(&mut cfg.dataset, take(key, v, p))
                }
                "schedule" => set(&mut cfg.schedule, take(key, v, p)),
                "models" => set(&mut cfg.models, take(key, v, p)),
                "train" => {
                    if v.get("seed").is_some() {
                        p.push("train.seed: not allowed; training seeds derive from the global seed".into());
                    }
                    set(&mut cfg.train, take(key, v, p))
                }
                "samplers" => set(&mut cfg.samplers, take(key, v, p)),
                "n_samples" => set(&mut cfg.n_samples, take(key, v, p)),
                "trajectory_stride" => set(&mut cfg.trajectory_stride, take(key, v, p)),
                "tid" => set(&mut cfg.tid, take(key, v, p)),
                "diagnostics" => set(&mut cfg.diagnostics, take(key, v, p)),
                "seesaw" => set(&mut cfg.seesaw, take(key, v, p)),
                "plots" => set(&mut cfg.plots, take(key, v, p)),
                other => p.push(format!("{other}: unknown key")),
            }
        }
        if !have_dataset {
            probs.push("dataset: missing".into());
        }
        if probs.is_empty() {
            probs = cfg.problems();
        }
        if probs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(probs))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("config: cannot read {}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Semantic problems, as `key: reason` strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.threads == 0 {
            out.push("threads: must be at least 1".into());
        }
        if let Err(e) = self.dataset.spec.validate() {
            out.push(format!("dataset.spec: {e}"));
        }
        if self.dataset.n == 0 {
            out.push("dataset.n: must be at least 1".into());
        }
        if let Err(e) = self.schedule.validate() {
            out.push(format!("schedule: {e}"));
        }
        let mog = self.dataset.spec.mog_spec();
        let mut labels = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let key = format!("models[{i}]");
            if m.label.is_empty()
                || !m.label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            {
                out.push(format!("{key}.label: must be nonempty and use only [A-Za-z0-9._-], got {:?}", m.label));
            }
            if !labels.insert(m.label.as_str()) {
                out.push(format!("{key}.label: duplicate label {:?}", m.label));
            }
            if m.oracle {
                if mog.is_none() {
                    out.push(format!("{key}.oracle: the dataset has no analytic mixture"));
                }
                continue;
            }
            if m.hidden.is_empty() || m.hidden.contains(&0) {
                out.push(format!("{key}.hidden: needs at least one layer, all widths >= 1"));
            }
            if let Some(ts) = m.t_split {
                let [lo, hi] = self.train.t_range;
                if !(lo <= ts && ts < hi) {
                    out.push(format!("{key}.t_split: must lie in [{lo}, {hi}), got {ts}"));
                }
                if m.high_noise_only {
                    out.push(format!("{key}.high_noise_only: cannot be combined with t_split"));
                }
            }
        }
        if self.models.iter().any(|m| !m.oracle) {
            if let Err(e) = self.train.to_config(Seed(0)).validate() {
                out.push(format!("train: {e}"));
            }
            if self.train.batch_size > self.dataset.n {
                out.push(format!(
                    "train.batch_size: {} exceeds dataset.n {}",
                    self.train.batch_size, self.dataset.n
                ));
            }
        }
        let mut kinds = BTreeSet::new();
        for (j, s) in self.samplers.iter().enumerate() {
            out.extend(s.problems().into_iter().map(|p| format!("samplers[{j}].{p}")));
            if !kinds.insert(s.kind.name()) {
                out.push(format!("samplers[{j}].sampler: duplicate sampler {}", s.kind.name()));
            }
        }
        if self.n_samples == 0 {
            out.push("n_samples: must be at least 1".into());
        }
        if self.trajectory_stride == Some(0) {
            out.push("trajectory_stride: must be at least 1".into());
        }
        let dim = self.dataset.spec.dim();
        if let Some(t) = &self.tid {
            if t.epsilons.is_empty() {
                out.push("tid.epsilons: needs at least one radius".into());
            }
            if t.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                out.push("tid.epsilons: radii must be positive and finite".into());
            }
            out.extend(self.tid_options(t).problems().into_iter().map(|p| format!("tid.{p}")));
            if t.dim.is_some_and(|k| k >= dim) {
                out.push(format!("tid.dim: out of range for {dim}-d data"));
            }
        }
        if let Some(d) = &self.diagnostics {
            let needs_oracle = !d.mae_times.is_empty() || d.error_covariance.is_some();
            if needs_oracle && mog.is_none() {
                out.push("diagnostics: velocity MAE and error covariance need a mixture dataset".into());
            }
            if d.mae_times.iter().any(|t| !(*t >= T_MIN && *t <= 1.0)) {
                out.push(format!("diagnostics.mae_times: times must lie in [{T_MIN}, 1]"));
            }
            if d.mae_points == 0 {
                out.push("diagnostics.mae_points: must be at least 1".into());
            }
            if let Some(e) = &d.error_covariance {
                if let Some(k) = e.samplers.iter().find(|k| !matches!(k, SamplerKind::Ode | SamplerKind::Sde)) {
                    out.push(format!(
                        "diagnostics.error_covariance.samplers: only ode and sde, got {}",
                        k.name()
                    ));
                }
                if e.steps == 0 || e.chains == 0 {
                    out.push("diagnostics.error_covariance: steps and chains must be at least 1".into());
                }
            }
            if let Some(ds) = &d.density {
                out.extend(ds.run.problems().into_iter().map(|p| format!("diagnostics.density.run.{p}")));
                if ds.run.kind == SamplerKind::Ald {
                    out.push("diagnostics.density.run.sampler: ald records no trajectory".into());
                }
                if ds.dim >= dim {
                    out.push(format!("diagnostics.density.dim: out of range for {dim}-d data"));
                }
                if ds.bins == 0 || !(ds.range[0] < ds.range[1]) {
                    out.push("diagnostics.density: need bins >= 1 and range[0] < range[1]".into());
                }
                if ds.chains == 0 || ds.stride == 0 {
                    out.push("diagnostics.density: chains and stride must be at least 1".into());
                }
            }
            if let Some(g) = &d.velocity_grid {
                if g.dim >= dim {
                    out.push(format!("diagnostics.velocity_grid.dim: out of range for {dim}-d data"));
                }
                if g.nx < 2 || g.nt < 2 {
                    out.push("diagnostics.velocity_grid: nx and nt must be at least 2".into());
                }
                if !(g.t_range[0] >= T_MIN && g.t_range[0] < g.t_range[1] && g.t_range[1] <= 1.0) {
                    out.push(format!("diagnostics.velocity_grid.t_range: must satisfy {T_MIN} <= lo < hi <= 1"));
                }
            }
        }
        if let Some(s) = &self.seesaw {
            if s.p_max == 0 || s.p_max > P_MAX {
                out.push(format!("seesaw.p_max: must lie in 1..={P_MAX}, got {}", s.p_max));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Stages that have something to do under this config, in run order.
    pub fn enabled_stages(&self) -> Vec<Stage> {
        let mut out = vec![Stage::Gen];
        if self.models.iter().any(|m| !m.oracle) {
            out.push(Stage::Train);
        }
        if !self.models.is_empty() && !self.samplers.is_empty() {
            out.push(Stage::Sample);
            if self.tid.is_some() {
                out.push(Stage::Tid);
            }
        }
        if self.diagnostics.is_some() && !self.models.is_empty() {
            out.push(Stage::Diagnose);
        }
        if self.seesaw.is_some() {
            out.push(Stage::Seesaw);
        }
        out
    }

    fn stage_problems(&self, stages: &[Stage]) -> Vec<String> {
        let mut out = Vec::new();
        for s in stages {
            let missing = match s {
                Stage::Gen | Stage::Seesaw => None,
                Stage::Train if !self.models.iter().any(|m| !m.oracle) => Some("models: no network to train"),
                Stage::Sample | Stage::Tid if self.models.is_empty() || self.samplers.is_empty() => {
                    Some("models, samplers: both are needed to sample")
                }
                Stage::Tid if self.tid.is_none() => Some("tid: section missing"),
                Stage::Diagnose if self.diagnostics.is_none() || self.models.is_empty() => {
                    Some("diagnostics, models: both are needed to diagnose")
                }
                _ => None,
            };
            out.extend(missing.map(String::from));
        }
        if self.out_dir.is_none() {
            out.push("out_dir: missing (set it in the config or pass --out)".into());
        }
        out
    }

    fn tid_options(&self, t: &TidSection) -> TidOptions {
        TidOptions {
            subset: t.subset,
            seed: self.seeds().tid,
            dim: t.dim,
            convention: t.tid_convention,
            top_k: t.top_k,
        }
    }

    /// SHA-256 of the config with `out_dir` and `threads` cleared; neither
    /// changes any artifact.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.threads = 1;
        let text = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn seeds(&self) -> SeedTable {
        let s = self.seed;
        SeedTable {
            dataset: s.derive(1),
            models: self
                .models
                .iter()
                .enumerate()
                .map(|(i, m)| ModelSeeds {
                    label: m.label.clone(),
                    init: s.derive(2).derive(i as u64),
                    train: s.derive(3).derive(i as u64),
                })
                .collect(),
            sampling: s.derive(4),
            tid: s.derive(5),
            diagnostics: s.derive(6),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Deserialize one top-level section, recording type errors and unknown keys.
fn take<T: Serialize + DeserializeOwned>(key: &str, v: &Value, probs: &mut Vec<String>) -> Option<T> {
    match serde_path_to_error::deserialize::<_, T>(v.clone()) {
        Ok(t) => {
            let back = serde_json::to_value(&t).expect("config section serializes");
            unknown_keys(v, &back, key, probs);
            Some(t)
        }
        Err(e) => {
            let path = e.path().to_string();
            let full = if path == "." { key.to_string() } else { format!("{key}.{path}") };
            probs.push(format!("{}: {}", full.replace(".[", "["), e.into_inner()));
            None
        }
    }
}

/// Keys present in `orig` that did not survive a round trip through the typed config.
fn unknown_keys(orig: &Value, back: &Value, path: &str, out: &mut Vec<String>) {
    match (orig, back) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                match b.get(k) {
                    Some(bv) => unknown_keys(v, bv, &format!("{path}.{k}"), out),
                    None => out.push(format!("{path}.{k}: unknown key")),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                unknown_keys(x, y, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSeeds {
    pub label: String,
    pub init: Seed,
    pub train: Seed,
}

/// Seeds every stage derives from the global seed.
///
/// Sampler `j` of model `i` runs on `sampling.derive(i).derive(j)`. The
/// diagnostics seed is shared by all models so they see the same test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTable {
    pub dataset: Seed,
    pub models: Vec<ModelSeeds>,
    pub sampling: Seed,
    pub tid: Seed,
    pub diagnostics: Seed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gen,
    Train,
    Sample,
    Tid,
    Diagnose,
    Seesaw,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Tid => "tid",
            Stage::Diagnose => "diagnose",
            Stage::Seesaw => "seesaw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    pub ok: bool,
}

/// Written to `manifest.json` after every invocation. Runs in the same
/// directory must share the config hash; their stages and files accumulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub name: String,
    pub config_sha256: String,
    pub seed: Seed,
    pub seeds: SeedTable,
    pub stages: Vec<StageRecord>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_s: f64,
    pub config: ExperimentConfig,
}

/// Holds the output directory's lock file for the lifetime of a run.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{} exists: another run owns this directory (remove it if stale)", path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

enum Loaded {
    Oracle(MogSpec),
    Net(ScoreModel),
}

impl Loaded {
    fn source(&self) -> &dyn ScoreSource {
        match self {
            Loaded::Oracle(m) => m,
            Loaded::Net(m) => m,
        }
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    seeds: SeedTable,
    dataset: Option<Dataset>,
    models: Vec<Option<Loaded>>,
    samples: Vec<Vec<Option<Dataset>>>,
    files: BTreeSet<String>,
    warnings: Vec<String>,
}

/// Run every enabled stage of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    run_stages(cfg, &cfg.enabled_stages())
}

/// Run the given stages in order. Artifacts a stage needs but does not
/// produce (checkpoints, sample CSVs) are read back from the output directory.
pub fn run_stages(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Manifest> {
    let mut probs = cfg.problems();
    probs.extend(cfg.stage_problems(stages));
    if !probs.is_empty() {
        return Err(Error::Config(probs));
    }
    let out = cfg.out_dir.clone().expect("checked above");
    let _lock = DirLock::acquire(&out)?;

    let manifest_path = out.join(MANIFEST);
    let previous: Option<Manifest> = match fs::read_to_string(&manifest_path) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let hash = cfg.hash();
    if let Some(prev) = &previous {
        if prev.config_sha256 != hash {
            return Err(Error::Config(vec![format!(
                "out_dir: {} holds a different experiment (config hash {})",
                out.display(),
                prev.config_sha256
            )]));
        }
    }

    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut runner = Runner {
        cfg,
        out,
        seeds: cfg.seeds(),
        dataset: None,
        models: cfg.models.iter().map(|_| None).collect(),
        samples: cfg.models.iter().map(|_| cfg.samplers.iter().map(|_| None).collect()).collect(),
        files: previous.iter().flat_map(|m| m.files.iter().cloned()).collect(),
        warnings: Vec::new(),
    };
    let mut records = previous.as_ref().map(|m| m.stages.clone()).unwrap_or_default();
    let mut failure = None;
    for &stage in stages {
        info!("stage {}", stage.name());
        let t0 = Instant::now();
        let res = match stage {
            Stage::Gen => runner.gen(),
            Stage::Train => runner.train(),
            Stage::Sample => runner.sample(),
            Stage::Tid => runner.tid(),
            Stage::Diagnose => runner.diagnose(),
            Stage::Seesaw => runner.seesaw(),
        };
        records.push(StageRecord {
            stage,
            seconds: t0.elapsed().as_secs_f64(),
            ok: res.is_ok(),
        });
        if let Err(e) = res {
            failure = Some(Error::Stage {
                stage: stage.name().into(),
                source: Box::new(e),
            });
            break;
        }
    }
    let mut warnings = previous.map(|m| m.warnings).unwrap_or_default();
    warnings.extend(runner.warnings);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        name: cfg.name.clone(),
        config_sha256: hash,
        seed: cfg.seed,
        seeds: runner.seeds,
        stages: records,
        files: runner.files.into_iter().collect(),
        warnings,
        started_unix: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Downsample a long curve for plotting.
fn thin(points: Vec<(f64, f64)>, max: usize) -> Vec<(f64, f64)> {
    let step = points.len().div_ceil(max).max(1);
    let last = points.last().copied();
    let mut out: Vec<_> = points.into_iter().step_by(step).collect();
    if let (Some(l), Some(o)) = (last, out.last()) {
        if *o != l {
            out.push(l);
        }
    }
    out
}

impl Runner<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.insert(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn plot(&mut self, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
        if self.cfg.plots {
            self.write_text(name, &svg())?;
        }
        Ok(())
    }

    fn run_opts(&self, stride: usize) -> RunOptions {
        RunOptions {
            threads: self.cfg.threads,
            stride,
        }
    }

    fn mixture(&self) -> Result<MogSpec> {
        self.cfg
            .dataset
            .spec
            .mog_spec()
            .ok_or_else(|| Error::Config(vec!["dataset: no analytic mixture".into()]))
    }

    fn dataset(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let d = &self.cfg.dataset;
            self.dataset = Some(gen_dataset(&d.spec, d.n, self.seeds.dataset)?);
        }
        Ok(self.dataset.as_ref().expect("just set"))
    }

    fn gen(&mut self) -> Result<()> {
        self.dataset()?;
        let data = self.dataset.take().expect("generated");
        let mut w = self.create("dataset.csv")?;
        data.write_csv(&mut w)?;
        w.flush()?;
        if data.dim() >= 2 {
            let pts: Vec<(f64, f64)> = data.points.rows().into_iter().take(5000).map(|r| (r[0], r[1])).collect();
            self.plot("dataset.svg", || {
                scatter_chart("training data", "dim0", "dim1", &[Series::new("data", pts)])
            })?;
        }
        self.dataset = Some(data);
        Ok(())
    }

    fn checkpoint_name(label: &str) -> String {
        format!("checkpoint_{label}.json")
    }

    fn train(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let sched = cfg.schedule;
        let dim = cfg.dataset.spec.dim();
        for (i, m) in cfg.models.iter().enumerate() {
            if m.oracle {
                continue;
            }
            let seeds = self.seeds.models[i].clone();
            let mut tc = cfg.train.to_config(seeds.train);
            if m.high_noise_only {
                tc = tc.high_noise_only();
            }
            let arch = m.architecture();
            let t0 = Instant::now();
            let net = ScoreNet::new(&arch, dim, sched, seeds.init)?;
            let data = self.dataset()?;
            let (ckpt, curves) = match m.t_split {
                None => {
                    let o = train(net, data, &sched, &tc)?;
                    let ckpt = Checkpoint {
                        model: ScoreModel::Single(o.net),
                        adam: vec![o.adam],
                        train_seed: Some(seeds.train),
                    };
                    (ckpt, vec![(String::new(), o.losses)])
                }
                Some(ts) => {
                    let low = ScoreNet::new(&arch, dim, sched, seeds.init.derive(1))?;
                    let (model, low_l, high_l) = train_two_model(low, net, data, &sched, &tc, ts)?;
                    let ckpt = Checkpoint {
                        model,
                        adam: Vec::new(),
                        train_seed: Some(seeds.train),
                    };
                    (ckpt, vec![("_low".to_string(), low_l), ("_high".to_string(), high_l)])
                }
            };
            info!("trained {} in {:.1}s", m.label, t0.elapsed().as_secs_f64());
            let name = Self::checkpoint_name(&m.label);
            self.files.insert(name.clone());
            save_checkpoint(&ckpt, &self.out.join(&name))?;
            let mut series = Vec::new();
            for (suffix, losses) in &curves {
                if losses.is_empty() {
                    continue;
                }
                let mut w = self.create(&format!("loss_{}{suffix}.csv", m.label))?;
                write_loss_csv(losses, &mut w)?;
                w.flush()?;
                let pts = losses.iter().enumerate().map(|(k, &l)| (k as f64, l)).collect();
                series.push(Series::new(format!("{}{suffix}", m.label), thin(pts, 1000)));
            }
            self.plot(&format!("loss_{}.svg", m.label), || {
                line_chart("training loss", "iteration", "loss", &series)
            })?;
            self.models[i] = Some(Loaded::Net(ckpt.model));
        }
        Ok(())
    }

    fn model(&mut self, i: usize) -> Result<&Loaded> {
        if self.models[i].is_none() {
            let m = &self.cfg.models[i];
            let loaded = if m.oracle {
                Loaded::Oracle(self.mixture()?)
            } else {
                let path = self.out.join(Self::checkpoint_name(&m.label));
                if !path.exists() {
                    return Err(Error::Load {
                        field: m.label.clone(),
                        msg: format!("{} not found; run the train stage first", path.display()),
                    });
                }
                Loaded::Net(load_checkpoint(&path)?.model)
            };
            self.models[i] = Some(loaded);
        }
        Ok(self.models[i].as_ref().expect("just set"))
    }

    fn sample_name(&self, i: usize, j: usize) -> String {
        format!(
            "samples_{}_{}.csv",
            self.cfg.models[i].label,
            self.cfg.samplers[j].kind.name()
        )
    }

    fn sample(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let record = cfg.trajectory_stride.is_some();
        let opts = self.run_opts(cfg.trajectory_stride.unwrap_or(1));
        for i in 0..cfg.models.len() {
            let label = cfg.models[i].label.clone();
            let mut series = Vec::new();
            for (j, sc) in cfg.samplers.iter().enumerate() {
                let seed = self.seeds.sampling.derive(i as u64).derive(j as u64);
                let t0 = Instant::now();
                let src = self.model(i)?.source();
                let (data, traj) = run_sampler_with(src, &cfg.schedule, sc, cfg.n_samples, seed, record, opts)?;
                info!("sampled {label}/{} in {:.1}s", sc.kind.name(), t0.elapsed().as_secs_f64());
                let mut w = self.create(&self.sample_name(i, j))?;
                data.write_csv(&mut w)?;
                w.flush()?;
                if let Some(traj) = traj {
                    let mut w = self.create(&format!("trajectory_{label}_{}.csv", sc.kind.name()))?;
                    traj.write_csv(&mut w, 1)?;
                    w.flush()?;
                }
                if data.dim() >= 2 {
                    let pts = data.points.rows().into_iter().take(5000).map(|r| (r[0], r[1])).collect();
                    series.push(Series::new(sc.kind.name(), pts));
                }
                self.samples[i][j] = Some(data);
            }
            if !series.is_empty() {
                self.plot(&format!("samples_{label}.svg"), || {
                    scatter_chart(&format!("samples of {label}"), "dim0", "dim1", &series)
                })?;
            }
        }
        Ok(())
    }

    fn samples(&mut self, i: usize, j: usize) -> Result<&Dataset> {
        if self.samples[i][j].is_none() {
            let path = self.out.join(self.sample_name(i, j));
            let f = File::open(&path).map_err(|e| Error::Load {
                field: path.display().to_string(),
                msg: format!("{e}; run the sample stage first"),
            })?;
            self.samples[i][j] = Some(Dataset::read_csv(f)?);
        }
        Ok(self.samples[i][j].as_ref().expect("just set"))
    }

    fn tid(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let t = cfg.tid.as_ref().expect("checked by stage_problems");
        let opts = cfg.tid_options(t);
        let train = self.dataset()?.clone();
        let mut rows = String::from("model,sampler,epsilon,hill_train,hill_sampled,alpha_train,alpha_sampled,tid\n");
        let mut series = Vec::new();
        if t.ccdf {
            let k = opts.subset.min(train.len()).min(cfg.n_samples);
            let sub = draw_subset(train.points.view(), k, opts.seed);
            let ccdf = tail_ccdf(&neighbor_counts(sub.view(), t.epsilons[0], t.dim)?)?;
            let mut w = self.create("ccdf_train.csv")?;
            write_ccdf_csv(&ccdf, &mut w)?;
            w.flush()?;
        }
        for (i, m) in cfg.models.iter().enumerate() {
            for (j, sc) in cfg.samplers.iter().enumerate() {
                let sampled = self.samples(i, j)?.clone();
                let mut pts = Vec::new();
                for &eps in &t.epsilons {
                    let (ht, hs, at, as_, tid) = match tid_report(&train, &sampled, &[eps], &opts) {
                        Ok(r) => (r.hill_train[0], r.hill_sampled[0], r.alpha_train[0], r.alpha_sampled[0], r.tid[0]),
                        Err(Error::DegenerateTail(msg)) => {
                            self.warnings
                                .push(format!("tid {}/{}: {msg}", m.label, sc.kind.name()));
                            let a = tail_index(0.0, opts.convention);
                            (0.0, 0.0, a, a, f64::NAN)
                        }
                        Err(e) => return Err(e),
                    };
                    rows.push_str(&format!(
                        "{},{},{eps},{ht},{hs},{at},{as_},{tid}\n",
                        m.label,
                        sc.kind.name()
                    ));
                    pts.push((eps, tid));
                }
                series.push((m, sc.kind, pts));
                if t.ccdf {
                    let k = opts.subset.min(train.len()).min(sampled.len());
                    let sub = draw_subset(sampled.points.view(), k, opts.seed);
                    let ccdf = tail_ccdf(&neighbor_counts(sub.view(), t.epsilons[0], t.dim)?)?;
                    let mut w = self.create(&format!("ccdf_{}_{}.csv", m.label, sc.kind.name()))?;
                    write_ccdf_csv(&ccdf, &mut w)?;
                    w.flush()?;
                }
            }
        }
        self.write_text("tid.csv", &rows)?;
        let by_width = t.epsilons.len() == 1 && cfg.models.iter().filter(|m| m.width().is_some()).count() > 1;
        let lines: Vec<Series> = if by_width {
            cfg.samplers
                .iter()
                .map(|sc| {
                    let pts = series
                        .iter()
                        .filter(|(m, k, _)| *k == sc.kind && m.width().is_some())
                        .map(|(m, _, p)| (m.width().unwrap() as f64, p[0].1))
                        .collect();
                    Series::new(sc.kind.name(), pts)
                })
                .collect()
        } else {
            series
                .iter()
                .map(|(m, k, p)| Series::new(format!("{}/{}", m.label, k.name()), p.clone()))
                .collect()
        };
        let xlabel = if by_width { "width" } else { "epsilon" };
        self.plot("tid.svg", || line_chart("tail index difference", xlabel, "TID", &lines))
    }

    fn diagnose(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let d = cfg.diagnostics.as_ref().expect("checked by stage_problems");
        let sched = cfg.schedule;
        let seed = self.seeds.diagnostics;

        if !d.mae_times.is_empty() {
            let oracle = self.mixture()?;
            let mut rows = String::from("model,width,t,mae\n");
            let mut table = Vec::new();
            for (i, m) in cfg.models.iter().enumerate() {
                if m.oracle {
                    continue;
                }
                let src = self.model(i)?.source();
                for (k, &t) in d.mae_times.iter().enumerate() {
                    let mae = velocity_mae(src, &oracle, &sched, t, d.mae_points, seed.derive(k as u64))?;
                    let width = m.width().map(|w| w.to_string()).unwrap_or_default();
                    rows.push_str(&format!("{},{width},{t},{mae}\n", m.label));
                    table.push((m, t, mae));
                }
            }
            self.write_text("mae.csv", &rows)?;
            let lines: Vec<Series> = if table.iter().filter(|r| r.1 == d.mae_times[0]).count() > 1 {
                d.mae_times
                    .iter()
                    .map(|&t| {
                        let pts = table
                            .iter()
                            .filter(|r| r.1 == t)
                            .map(|r| (r.0.width().unwrap_or(0) as f64, r.2))
                            .collect();
                        Series::new(format!("t = {t}"), pts)
                    })
                    .collect()
            } else {
                vec![Series::new("mae", table.iter().map(|r| (r.1, r.2)).collect())]
            };
            let xlabel = if lines.len() > 1 || d.mae_times.len() == 1 { "width" } else { "t" };
            self.plot("mae.svg", || line_chart("velocity MAE", xlabel, "MAE", &lines))?;
        }

        if let Some(e) = &d.error_covariance {
            let oracle = self.mixture()?;
            let mut rows = String::from("model,sampler,t,c\n");
            let mut lines = Vec::new();
            for (i, m) in cfg.models.iter().enumerate() {
                let src = self.model(i)?.source();
                for &kind in &e.samplers {
                    let c = error_covariance(src, &oracle, &sched, e.steps, e.chains, kind, seed.derive(100))?;
                    for (t, v) in &c {
                        rows.push_str(&format!("{},{},{t},{v}\n", m.label, kind.name()));
                    }
                    lines.push(Series::new(format!("{}/{}", m.label, kind.name()), c));
                }
            }
            self.write_text("errcov.csv", &rows)?;
            self.plot("errcov.svg", || line_chart("velocity error covariance", "t", "c(t)", &lines))?;
        }

        if let Some(ds) = &d.density {
            let mut rows = String::from("model,sampler,t,bin_center,density\n");
            let opts = self.run_opts(ds.stride);
            for (i, m) in cfg.models.iter().enumerate() {
                let src = self.model(i)?.source();
                let (_, traj) = run_sampler_with(src, &sched, &ds.run, ds.chains, seed.derive(200), true, opts)?;
                let ev = density_evolution(&traj.expect("recorded"), ds.dim, ds.bins, (ds.range[0], ds.range[1]))?;
                for (r, t) in ev.times.iter().enumerate() {
                    for (b, c) in ev.centers.iter().enumerate() {
                        rows.push_str(&format!(
                            "{},{},{t},{c},{}\n",
                            m.label,
                            ds.run.kind.name(),
                            ev.density[[r, b]]
                        ));
                    }
                }
                let values: Vec<Vec<f64>> = ev.density.rows().into_iter().map(|r| r.to_vec()).collect();
                self.plot(&format!("density_{}.svg", m.label), || {
                    heatmap(
                        &format!("density of dim{} ({}, {})", ds.dim, m.label, ds.run.kind.name()),
                        &format!("x[{}]", ds.dim),
                        "t",
                        &ev.centers,
                        &ev.times,
                        &values,
                    )
                })?;
            }
            self.write_text("density.csv", &rows)?;
        }

        if let Some(g) = &d.velocity_grid {
            let mut rows = String::from("model,x,t,v\n");
            for (i, m) in cfg.models.iter().enumerate() {
                let src = self.model(i)?.source();
                let grid = velocity_grid(
                    src,
                    &sched,
                    g.dim,
                    (g.x_range[0], g.x_range[1]),
                    (g.t_range[0], g.t_range[1]),
                    (g.nx, g.nt),
                    seed.derive(300),
                )?;
                for (r, t) in grid.ts.iter().enumerate() {
                    for (c, x) in grid.xs.iter().enumerate() {
                        rows.push_str(&format!("{},{x},{t},{}\n", m.label, grid.values[[r, c]]));
                    }
                }
                let values: Vec<Vec<f64>> = grid.values.rows().into_iter().map(|r| r.to_vec()).collect();
                self.plot(&format!("velocity_grid_{}.svg", m.label), || {
                    heatmap(
                        &format!("velocity, dim{} ({})", g.dim, m.label),
                        &format!("x[{}]", g.dim),
                        "t",
                        &grid.xs,
                        &grid.ts,
                        &values,
                    )
                })?;
            }
            self.write_text("velocity_grid.csv", &rows)?;
        }
        Ok(())
    }

    fn seesaw(&mut self) -> Result<()> {
        let p_max = self.cfg.seesaw.as_ref().map_or(default_p_max(), |s| s.p_max);
        let rows = seesaw_table(p_max)?;
        let mut w = self.create("seesaw.csv")?;
        write_seesaw_csv(&rows, &mut w)?;
        w.flush()?;
        let l1 = rows.iter().map(|r| (r.p as f64, r.ell1)).collect();
        let l2 = rows.iter().map(|r| (r.p as f64, r.ell2)).collect();
        self.plot("seesaw.svg", || {
            line_chart(
                "optimal-expansion losses",
                "p",
                "loss",
                &[Series::new("ell1", l1), Series::new("ell2", l2)],
            )
        })
    }
}
