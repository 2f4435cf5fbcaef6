//! Experiment configuration: `key = value` lines grouped under `[section]`
//! headers, with `#` comments.
//!
//! ```text
//! [data]
//! kind = colored
//! n_train = 20000
//!
//! [experiment]
//! rho = 0.005, 0.01, 0.05
//! seeds = 0, 1, 2
//! mode = dpr
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dpr_core::data::GlyphStyle;
use dpr_core::nn::StepDecay;
use dpr_core::{DatasetKind, GenConfig, TrainSchedule};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

/// Which model the run trains and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Dpr,
    Erm,
    Reweighted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dpr => "dpr",
            Mode::Erm => "erm",
            Mode::Reweighted => "reweighted",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        match s.trim() {
            "dpr" => Ok(Mode::Dpr),
            "erm" => Ok(Mode::Erm),
            "reweighted" => Ok(Mode::Reweighted),
            other => Err(LabError::config(format!(
                "unknown mode {other:?} (expected dpr, erm or reweighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub num_bias_attrs: usize,
    /// Color noise variance.
    pub sigma: f64,
    pub image_size: usize,
    pub glyph: GlyphStyle,
    pub n_train: usize,
    pub n_test: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Pre-generated native dataset files used instead of the generator.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Colored,
            num_classes: 10,
            num_bias_attrs: 1,
            sigma: 1e-4,
            image_size: 12,
            glyph: GlyphStyle::default(),
            n_train: 20_000,
            n_test: 5_000,
            idx_images: None,
            idx_labels: None,
            train_path: None,
            test_path: None,
        }
    }
}

impl DataConfig {
    /// Generator settings at conflict ratio `rho`.
    pub fn gen_config(&self, rho: f64) -> GenConfig {
        let base = match self.kind {
            DatasetKind::Colored => GenConfig::colored(self.num_classes),
            DatasetKind::Multibias => GenConfig::multibias(self.num_classes, self.num_bias_attrs),
            DatasetKind::ColorizedIdx => GenConfig::colorized_idx(self.num_classes),
        };
        GenConfig {
            sigma: self.sigma,
            image_size: self.image_size,
            glyph: self.glyph.clone(),
            ..base.with_rho(rho)
        }
    }
}

/// Axes explored by `ablate`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub q: Vec<f64>,
    pub tau: Vec<f64>,
    /// Run the five initialization / GCE / augmentation rows.
    pub toggles: bool,
    pub modes: Vec<Mode>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.q.is_empty() && self.tau.is_empty() && !self.toggles && self.modes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsConfig {
    /// Loss caps; empty means the single default `4 ln K`.
    pub caps: Vec<f64>,
    pub deltas: Vec<f64>,
    pub population_per_group: usize,
    pub mc_trials: usize,
    pub mc_sample_size: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            caps: Vec::new(),
            deltas: vec![0.05, 0.1],
            population_per_group: 50_000,
            mc_trials: 10_000,
            mc_sample_size: 50,
        }
    }
}

impl BoundsConfig {
    pub fn resolved_caps(&self, num_classes: usize) -> Vec<f64> {
        if self.caps.is_empty() {
            vec![4.0 * (num_classes as f64).ln()]
        } else {
            self.caps.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub schedule: TrainSchedule,
    pub sweep: SweepConfig,
    pub bounds: BoundsConfig,
    pub histogram_bins: usize,
    /// Worker threads for independent cells; 0 means one per available core.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            rhos: vec![0.005, 0.01, 0.05],
            seeds: vec![0, 1, 2],
            mode: Mode::Dpr,
            schedule: TrainSchedule::default(),
            sweep: SweepConfig::default(),
            bounds: BoundsConfig::default(),
            histogram_bins: 20,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line settings layered over a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<String>,
    pub mode: Option<String>,
    pub rho: Option<String>,
    pub q: Option<String>,
    pub tau: Option<String>,
    pub no_init: bool,
    pub no_gce: bool,
    pub no_augment: bool,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub const CODE_VERSION: &str = concat!("dpr-lab ", env!("CARGO_PKG_VERSION"));

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> LabResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> LabResult<Self> {
        let mut cfg = Self::default();
        for (key, (line, value)) in parse_entries(text)? {
            cfg.set(&key, &value)
                .map_err(|e| LabError::config(format!("line {line}: {key}: {}", strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> LabResult<()> {
        let d = &mut self.data;
        let s = &mut self.schedule;
        match key {
            "data.kind" => {
                d.kind = match v {
                    "colored" => DatasetKind::Colored,
                    "multibias" => DatasetKind::Multibias,
                    "idx" | "colorized_idx" => DatasetKind::ColorizedIdx,
                    _ => return Err(LabError::config(format!("unknown dataset kind {v:?}"))),
                }
            }
            "data.num_classes" => d.num_classes = num(v)?,
            "data.num_bias_attrs" => d.num_bias_attrs = num(v)?,
            "data.sigma" => d.sigma = num(v)?,
            "data.image_size" => d.image_size = num(v)?,
            "data.max_shift" => d.glyph.max_shift = num(v)?,
            "data.min_intensity" => d.glyph.min_intensity = num(v)?,
            "data.dropout" => d.glyph.dropout = num(v)?,
            "data.n_train" => d.n_train = num(v)?,
            "data.n_test" => d.n_test = num(v)?,
            "data.idx_images" => d.idx_images = path(v),
            "data.idx_labels" => d.idx_labels = path(v),
            "data.train_path" => d.train_path = path(v),
            "data.test_path" => d.test_path = path(v),
            "experiment.rho" => self.rhos = list(v)?,
            "experiment.seeds" => self.seeds = parse_seeds(v)?,
            "experiment.mode" => self.mode = v.parse()?,
            "experiment.workers" => self.workers = num(v)?,
            "experiment.histogram_bins" => self.histogram_bins = num(v)?,
            "train.biased_iters" => s.biased_iters = num(v)?,
            "train.debiased_iters" => s.debiased_iters = num(v)?,
            "train.batch_size" => s.batch_size = num(v)?,
            "train.learning_rate" => s.optimizer.learning_rate = num(v)?,
            "train.momentum" => s.optimizer.momentum = num(v)?,
            "train.weight_decay" => s.optimizer.weight_decay = num(v)?,
            "train.lr_decay_factor" => {
                let period = s.optimizer.lr_decay.map_or(1, |d| d.period);
                s.optimizer.lr_decay = Some(StepDecay { factor: num(v)?, period });
            }
            "train.lr_decay_period" => {
                let factor = s.optimizer.lr_decay.map_or(1.0, |d| d.factor);
                s.optimizer.lr_decay = Some(StepDecay { factor, period: num(v)? });
            }
            "train.q" => s.q = num(v)?,
            "train.tau" => s.tau = num(v)?,
            "train.hidden" => s.hidden = list(v)?,
            "train.init_from_biased" => s.init_from_biased = boolean(v)?,
            "train.use_gce" => s.use_gce = boolean(v)?,
            "train.augment" => s.augment = boolean(v)?,
            "train.augment_biased" => s.augment_biased = boolean(v)?,
            "train.jitter" => s.augment_params.jitter = num(v)?,
            "train.max_rotation_deg" => s.augment_params.max_rotation_deg = num(v)?,
            "train.monitor_groups" => s.monitor_groups = boolean(v)?,
            "sweep.q" => self.sweep.q = list(v)?,
            "sweep.tau" => self.sweep.tau = list(v)?,
            "sweep.toggles" => self.sweep.toggles = boolean(v)?,
            "sweep.modes" => {
                self.sweep.modes = split_list(v).map(str::parse).collect::<LabResult<_>>()?
            }
            "bounds.caps" => self.bounds.caps = list(v)?,
            "bounds.deltas" => self.bounds.deltas = list(v)?,
            "bounds.population_per_group" => self.bounds.population_per_group = num(v)?,
            "bounds.mc_trials" => self.bounds.mc_trials = num(v)?,
            "bounds.mc_sample_size" => self.bounds.mc_sample_size = num(v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(LabError::config("unknown key")),
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> LabResult<()> {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(s) = &o.seeds {
            self.seeds = parse_seeds(s).map_err(|e| flag("--seeds", e))?;
        }
        if let Some(m) = &o.mode {
            self.mode = m.parse()?;
        }
        if let Some(r) = &o.rho {
            self.rhos = list(r).map_err(|e| flag("--rho", e))?;
        }
        if let Some(q) = &o.q {
            self.sweep.q = list(q).map_err(|e| flag("--q", e))?;
            if let [only] = self.sweep.q[..] {
                self.schedule.q = only;
            }
        }
        if let Some(t) = &o.tau {
            self.sweep.tau = list(t).map_err(|e| flag("--tau", e))?;
            if let [only] = self.sweep.tau[..] {
                self.schedule.tau = only;
            }
        }
        if o.no_init {
            self.schedule.init_from_biased = false;
        }
        if o.no_gce {
            self.schedule.use_gce = false;
        }
        if o.no_augment {
            self.schedule.augment = false;
        }
        if o.idx_images.is_some() || o.idx_labels.is_some() {
            self.data.kind = DatasetKind::ColorizedIdx;
            if let Some(p) = &o.idx_images {
                self.data.idx_images = Some(p.clone());
            }
            if let Some(p) = &o.idx_labels {
                self.data.idx_labels = Some(p.clone());
            }
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        self.validate()
    }

    pub fn validate(&self) -> LabResult<()> {
        if self.seeds.is_empty() {
            return Err(LabError::config("seed list is empty"));
        }
        if self.rhos.is_empty() {
            return Err(LabError::config("rho list is empty"));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(LabError::config(format!("rho {r} outside [0, 1]")));
        }
        for r in &self.rhos {
            self.data.gen_config(*r).validate().map_err(|e| LabError::config(e.to_string()))?;
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(LabError::config("n_train and n_test must be positive"));
        }
        if self.data.kind == DatasetKind::ColorizedIdx
            && (self.data.idx_images.is_none() || self.data.idx_labels.is_none())
        {
            return Err(LabError::config("idx data needs both idx_images and idx_labels"));
        }
        if self.data.train_path.is_some() != self.data.test_path.is_some() {
            return Err(LabError::config("train_path and test_path must be given together"));
        }
        if self.data.train_path.is_some() && self.rhos.len() != 1 {
            return Err(LabError::config("a loaded train file fixes rho; give exactly one"));
        }
        let augments = self.schedule.augment || self.schedule.augment_biased;
        if self.data.kind == DatasetKind::Multibias && self.data.train_path.is_none() && augments {
            return Err(LabError::config(
                "multibias features are not images; set train.augment = false",
            ));
        }
        self.schedule.validate().map_err(|e| LabError::config(e.to_string()))?;
        if self.histogram_bins == 0 {
            return Err(LabError::config("histogram_bins must be positive"));
        }
        for &t in &self.sweep.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(LabError::config(format!("tau {t} must be positive")));
            }
        }
        for &q in &self.sweep.q {
            if !(q > 0.0 && q <= 1.0) {
                return Err(LabError::config(format!("q {q} outside (0, 1]")));
            }
        }
        let b = &self.bounds;
        if b.caps.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(LabError::config("bound caps must be positive"));
        }
        if b.deltas.is_empty() || b.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(LabError::config("bound deltas must lie in (0, 1)"));
        }
        if b.population_per_group == 0 || b.mc_sample_size == 0 || b.mc_trials < 1000 {
            return Err(LabError::config(
                "population and sample sizes must be positive and mc_trials at least 1000",
            ));
        }
        Ok(())
    }

    /// Every setting that influences results, in a fixed order. Output
    /// location and worker count are excluded.
    pub fn canonical(&self) -> String {
        let d = &self.data;
        let s = &self.schedule;
        let kind = match d.kind {
            DatasetKind::Colored => "colored",
            DatasetKind::Multibias => "multibias",
            DatasetKind::ColorizedIdx => "idx",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("[data]\nkind", kind.into());
        kv("num_classes", d.num_classes.to_string());
        kv("num_bias_attrs", d.num_bias_attrs.to_string());
        kv("sigma", d.sigma.to_string());
        kv("image_size", d.image_size.to_string());
        kv("max_shift", d.glyph.max_shift.to_string());
        kv("min_intensity", d.glyph.min_intensity.to_string());
        kv("dropout", d.glyph.dropout.to_string());
        kv("n_train", d.n_train.to_string());
        kv("n_test", d.n_test.to_string());
        for (k, p) in [
            ("idx_images", &d.idx_images),
            ("idx_labels", &d.idx_labels),
            ("train_path", &d.train_path),
            ("test_path", &d.test_path),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("\n[experiment]\nrho", join(&self.rhos));
        kv("seeds", join(&self.seeds));
        kv("mode", self.mode.to_string());
        kv("histogram_bins", self.histogram_bins.to_string());
        kv("\n[train]\nbiased_iters", s.biased_iters.to_string());
        kv("debiased_iters", s.debiased_iters.to_string());
        kv("batch_size", s.batch_size.to_string());
        kv("learning_rate", s.optimizer.learning_rate.to_string());
        kv("momentum", s.optimizer.momentum.to_string());
        kv("weight_decay", s.optimizer.weight_decay.to_string());
        if let Some(decay) = s.optimizer.lr_decay {
            kv("lr_decay_factor", decay.factor.to_string());
            kv("lr_decay_period", decay.period.to_string());
        }
        kv("q", s.q.to_string());
        kv("tau", s.tau.to_string());
        kv("hidden", join(&s.hidden));
        kv("init_from_biased", s.init_from_biased.to_string());
        kv("use_gce", s.use_gce.to_string());
        kv("augment", s.augment.to_string());
        kv("augment_biased", s.augment_biased.to_string());
        kv("jitter", s.augment_params.jitter.to_string());
        kv("max_rotation_deg", s.augment_params.max_rotation_deg.to_string());
        kv("monitor_groups", s.monitor_groups.to_string());
        kv("\n[sweep]\nq", join(&self.sweep.q));
        kv("tau", join(&self.sweep.tau));
        kv("toggles", self.sweep.toggles.to_string());
        kv("modes", join(&self.sweep.modes));
        kv("\n[bounds]\ncaps", join(&self.bounds.caps));
        kv("deltas", join(&self.bounds.deltas));
        kv("population_per_group", self.bounds.population_per_group.to_string());
        kv("mc_trials", self.bounds.mc_trials.to_string());
        kv("mc_sample_size", self.bounds.mc_sample_size.to_string());
        out
    }

    /// First 16 hex digits of SHA-256 over the canonical config and the code
    /// version.
    pub fn run_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        h.update(CODE_VERSION.as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

fn parse_entries(text: &str) -> LabResult<BTreeMap<String, (usize, String)>> {
    let mut section = String::new();
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| LabError::config(format!("line {line_no}: unterminated section")))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::config(format!("line {line_no}: expected key = value")))?;
        if section.is_empty() {
            return Err(LabError::config(format!("line {line_no}: key outside a section")));
        }
        let key = format!("{section}.{}", k.trim());
        if entries.insert(key.clone(), (line_no, v.trim().to_string())).is_some() {
            return Err(LabError::config(format!("line {line_no}: duplicate key {key}")));
        }
    }
    Ok(entries)
}

fn strip(e: LabError) -> String {
    match e {
        LabError::Config(m) => m,
        other => other.to_string(),
    }
}

fn flag(name: &str, e: LabError) -> LabError {
    LabError::config(format!("{name}: {}", strip(e)))
}

fn num<T: FromStr>(v: &str) -> LabResult<T> {
    v.trim()
        .parse()
        .map_err(|_| LabError::config(format!("cannot parse {v:?}")))
}

fn boolean(v: &str) -> LabResult<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(LabError::config(format!("expected true or false, got {v:?}"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Comma-separated values.
pub fn list<T: FromStr>(v: &str) -> LabResult<Vec<T>> {
    split_list(v).map(num).collect()
}

/// Comma-separated seeds; `a..b` expands to the half-open range.
pub fn parse_seeds(v: &str) -> LabResult<Vec<u64>> {
    let mut out = Vec::new();
    for item in split_list(v) {
        match item.split_once("..") {
            Some((lo, hi)) => out.extend(num::<u64>(lo)?..num::<u64>(hi)?),
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
