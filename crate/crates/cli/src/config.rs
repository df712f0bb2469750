//! `key = value` run configuration with a fixed key registry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use osteo_core::data::MULTICLASS_NAMES;
use osteo_core::eval::Averaging;
use osteo_core::model::{ModelConfig, OutputActivation};
use osteo_core::preprocess::AugmentPolicy;
use osteo_core::train::{GridSpec, TrainConfig};

use crate::CliError;

/// `(key, default, description)`. An empty default means "unset" or "use
/// the preset's value".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base seed for every random decision"),
    ("out_dir", "runs", "parent of hash-timestamp run directories"),
    ("data.roots", "", "comma-separated dataset roots, one subdirectory per class"),
    ("data.classes", "Normal,Osteoporosis", "class names (2 or 3), in label order"),
    ("data.expected_counts", "", "declared per-class counts of the merged data, checked at ingest"),
    ("data.expected_total", "", "declared total of the merged data, checked at ingest"),
    ("data.manifest", "", "existing manifest to use instead of ingesting the roots"),
    ("data.balance", "undersample", "undersample | oversample | none"),
    ("data.split", "0.6,0.2,0.2", "train,val,test fractions"),
    ("preprocess.standardize", "false", "reserved; only false is supported"),
    ("model.preset", "", "standard | reduced (default: standard, reduced for gradcheck)"),
    ("model.input_size", "", "square input side in pixels"),
    ("model.head_units", "", "units of the two hidden dense layers"),
    ("model.dropout", "", "dropout rate after the enhancement stack"),
    ("model.output_activation", "", "sigmoid | softmax (default: sigmoid for 2 classes)"),
    ("model.freeze_backbone", "", "keep backbone parameters fixed during training"),
    ("model.pretrained_weights", "", "weight file providing the backbone tensors"),
    ("model.batch_norm", "false", "reserved; only false is supported"),
    ("augment.enabled", "true", "random affine augmentation of training images"),
    ("augment.rotation_deg", "10", "maximum rotation in degrees"),
    ("augment.shift_frac", "0.1", "maximum shift as a fraction of the side"),
    ("augment.shear_deg", "10", "maximum shear in degrees"),
    ("augment.zoom_frac", "0.1", "maximum zoom deviation from 1"),
    ("augment.hflip_prob", "0.5", "probability of a horizontal flip"),
    ("train.epochs", "50", "number of epochs"),
    ("train.batch", "32", "mini-batch size"),
    ("train.lr", "0.001", "Adam learning rate"),
    ("train.lr_schedule", "constant", "reserved; only constant is supported"),
    ("train.checkpoint_every", "10", "periodic checkpoint cadence in epochs (0 = off)"),
    ("train.divergence_factor", "10", "stop when train loss exceeds this multiple of the first epoch's"),
    ("train.divergence_patience", "3", "consecutive epochs above the divergence limit before stopping"),
    ("grid.lrs", "0.01,0.001,0.0001", "learning rates searched by gridsearch"),
    ("grid.batches", "16,32", "batch sizes searched by gridsearch"),
    ("eval.checkpoint", "", "checkpoint evaluated by eval"),
    ("eval.averaging", "macro", "macro | weighted"),
    ("gradcheck.batch", "2", "images in the gradient-check batch"),
    ("gradcheck.eps", "0.001", "finite-difference step"),
    ("gradcheck.tolerance", "0.0001", "maximum accepted relative error"),
    ("synth.per_class", "150", "images per class written by synth"),
    ("synth.size", "64", "side of synthetic images"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Balance {
    Undersample,
    Oversample,
    None,
}

/// Fully parsed and validated configuration.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_roots: Vec<PathBuf>,
    pub classes: Vec<String>,
    pub expected_counts: Vec<usize>,
    pub expected_total: Option<usize>,
    pub manifest: Option<PathBuf>,
    pub balance: Balance,
    pub split: [f64; 3],
    pub model: ModelConfig,
    /// Model used by `gradcheck` (reduced unless a preset is given).
    pub gradcheck_model: ModelConfig,
    pub augment: AugmentPolicy,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
    pub grid: GridSpec,
    pub eval_checkpoint: Option<PathBuf>,
    pub averaging: Averaging,
    pub gradcheck_batch: usize,
    pub gradcheck_eps: f64,
    pub gradcheck_tolerance: f64,
    pub synth_per_class: usize,
    pub synth_size: usize,
    /// Resolved `key = value` lines, sorted by key.
    pub canonical: String,
}

impl Settings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            augment: self.augment.clone(),
            checkpoint_every: self.checkpoint_every,
            divergence_factor: self.divergence_factor,
            divergence_patience: self.divergence_patience,
            ..TrainConfig::default()
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        let key = k.trim();
        if !KEYS.iter().any(|(name, _, _)| *name == key) {
            return Err(CliError::Config(format!("line {}: unknown key `{key}`", i + 1)));
        }
        if out.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

struct Values<'a> {
    map: &'a BTreeMap<String, String>,
    base: &'a Path,
}

impl Values<'_> {
    fn raw(&self, key: &str) -> &str {
        self.map
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d))
            .unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.opt(key)?
            .ok_or_else(|| CliError::Config(format!("`{key}` must be set")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{}`", s.trim())))
            })
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| self.base.join(raw))
    }

    fn paths(&self, key: &str) -> Vec<PathBuf> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Vec::new();
        }
        raw.split(',').map(|s| self.base.join(s.trim())).collect()
    }

    fn fixed(&self, key: &str, allowed: &str) -> Result<(), CliError> {
        let raw = self.raw(key);
        if raw != allowed {
            return Err(CliError::Config(format!("`{key}` = `{raw}` is not supported (only `{allowed}`)")));
        }
        Ok(())
    }
}

fn model_config(v: &Values, preset: &str, classes: usize) -> Result<ModelConfig, CliError> {
    let mut cfg = match preset {
        "standard" => ModelConfig::standard(classes),
        "reduced" => ModelConfig::reduced(classes),
        other => return Err(CliError::Config(format!("`model.preset`: unknown preset `{other}`"))),
    };
    if let Some(s) = v.opt::<usize>("model.input_size")? {
        cfg.input_shape = [s, s, 3];
    }
    if let Some(u) = v.opt("model.head_units")? {
        cfg.head_units = u;
    }
    if let Some(d) = v.opt("model.dropout")? {
        cfg.dropout = d;
    }
    if let Some(a) = v.opt::<OutputActivation>("model.output_activation")? {
        cfg.output_activation = a;
    }
    if let Some(f) = v.opt("model.freeze_backbone")? {
        cfg.freeze_backbone = f;
    }
    cfg.backbone.pretrained_weights = v.path("model.pretrained_weights");
    cfg.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    Ok(cfg)
}

/// Builds settings from a config file (or defaults) plus a seed override.
/// Relative paths are resolved against the config file's directory.
pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Settings, CliError> {
    let (mut map, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_pairs(&text)?, base)
        }
        None => (BTreeMap::new(), PathBuf::new()),
    };
    if let Some(s) = seed {
        map.insert("seed".into(), s.to_string());
    }
    let v = Values { map: &map, base: &base };

    v.fixed("preprocess.standardize", "false")?;
    v.fixed("model.batch_norm", "false")?;
    v.fixed("train.lr_schedule", "constant")?;

    let classes: Vec<String> = v.list("data.classes")?;
    if !(2..=3).contains(&classes.len()) {
        return Err(CliError::Config(format!("`data.classes` needs 2 or 3 names, got {classes:?}")));
    }
    if classes.len() == 3 && classes.iter().zip(MULTICLASS_NAMES).any(|(a, b)| a != b) {
        eprintln!("note: three-class names differ from {MULTICLASS_NAMES:?}");
    }
    let split: Vec<f64> = v.list("data.split")?;
    let split: [f64; 3] = split
        .try_into()
        .map_err(|_| CliError::Config("`data.split` needs three fractions".into()))?;
    if (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || split.iter().any(|f| *f <= 0.0) {
        return Err(CliError::Config(format!("`data.split` {split:?} must be positive and sum to 1")));
    }
    let balance = match v.raw("data.balance") {
        "undersample" => Balance::Undersample,
        "oversample" => Balance::Oversample,
        "none" => Balance::None,
        other => return Err(CliError::Config(format!("`data.balance`: unknown mode `{other}`"))),
    };
    let expected_counts: Vec<usize> = v.list("data.expected_counts")?;
    if !expected_counts.is_empty() && expected_counts.len() != classes.len() {
        return Err(CliError::Config("`data.expected_counts` needs one count per class".into()));
    }

    let preset = v.raw("model.preset");
    let model = model_config(&v, if preset.is_empty() { "standard" } else { preset }, classes.len())?;
    let gradcheck_model = model_config(&v, if preset.is_empty() { "reduced" } else { preset }, classes.len())?;

    let augment = AugmentPolicy {
        enabled: v.get("augment.enabled")?,
        rotation_deg_max: v.get("augment.rotation_deg")?,
        shift_frac_max: v.get("augment.shift_frac")?,
        shear_deg_max: v.get("augment.shear_deg")?,
        zoom_frac_max: v.get("augment.zoom_frac")?,
        hflip_prob: v.get("augment.hflip_prob")?,
    };
    augment.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let grid = GridSpec {
        lr_candidates: v.list("grid.lrs")?,
        batch_candidates: v.list("grid.batches")?,
    };
    if grid.lr_candidates.is_empty()
        || grid.batch_candidates.is_empty()
        || grid.lr_candidates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite()))
        || grid.batch_candidates.contains(&0)
    {
        return Err(CliError::Config("grid needs positive learning rates and batch sizes".into()));
    }
    let lr: f64 = v.get("train.lr")?;
    let batch: usize = v.get("train.batch")?;
    if !(lr > 0.0 && lr.is_finite()) || batch == 0 {
        return Err(CliError::Config("`train.lr` and `train.batch` must be positive".into()));
    }
    let averaging = match v.raw("eval.averaging") {
        "macro" => Averaging::Macro,
        "weighted" => Averaging::Weighted,
        other => return Err(CliError::Config(format!("`eval.averaging`: unknown mode `{other}`"))),
    };

    let mut canonical = String::new();
    for (key, _, _) in KEYS {
        canonical.push_str(&format!("{key} = {}\n", v.raw(key)));
    }
    Ok(Settings {
        seed: v.get("seed")?,
        out_dir: v.path("out_dir").unwrap_or_else(|| PathBuf::from("runs")),
        data_roots: v.paths("data.roots"),
        classes,
        expected_counts,
        expected_total: v.opt("data.expected_total")?,
        manifest: v.path("data.manifest"),
        balance,
        split,
        model,
        gradcheck_model,
        augment,
        epochs: v.get("train.epochs")?,
        batch,
        lr,
        checkpoint_every: v.get("train.checkpoint_every")?,
        divergence_factor: v.get("train.divergence_factor")?,
        divergence_patience: v.get("train.divergence_patience")?,
        grid,
        eval_checkpoint: v.path("eval.checkpoint"),
        averaging,
        gradcheck_batch: v.get("gradcheck.batch")?,
        gradcheck_eps: v.get("gradcheck.eps")?,
        gradcheck_tolerance: v.get("gradcheck.tolerance")?,
        synth_per_class: v.get("synth.per_class")?,
        synth_size: v.get("synth.size")?,
        canonical,
    })
}
