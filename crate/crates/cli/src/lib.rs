//! Subcommand implementations behind the `osteo` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use osteo_core::data::{
    audit_counts, balance_classes, load_manifest, merge_datasets, oversample_train, restrict_classes,
    stratified_split, DatasetManifest, Split, SplitData,
};
use osteo_core::eval::{confusion_matrix, curves_csv, export_curves, export_report, metrics_with};
use osteo_core::gradcheck::{check_primitives, GradCheckOptions};
use osteo_core::model::{gradcheck_model, save_weights, ModelConfig, ModelState};
use osteo_core::rng::derive_seed;
use osteo_core::synth::{write_texture_dataset, TextureSpec};
use osteo_core::tape::OpKind;
use osteo_core::train::{evaluate_split, grid_search, Checkpoint, TrainHistory, Trainer};
use osteo_core::{Error, Rng, Tensor};
use sha2::{Digest, Sha256};

pub use config::{Balance, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 0 success, 1 verification failure, 2 configuration, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                Error::Diverged { .. } | Error::NonFiniteGradient(_) | Error::NonDeterministic(_) => 1,
                Error::Io { .. } | Error::Decode(_) | Error::Format(_) | Error::Data(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// `--out` if given, otherwise `<out_dir>/<config hash>-<UTC timestamp>`.
pub fn run_dir(settings: &Settings, out: Option<&Path>) -> CliResult<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let hash = Sha256::digest(settings.canonical.as_bytes());
            let hex: String = hash.iter().take(6).map(|b| format!("{b:02x}")).collect();
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            settings.out_dir.join(format!("{hex}-{stamp}"))
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write(&dir.join("config.txt"), &settings.canonical)?;
    Ok(dir)
}

fn counts_table(m: &DatasetManifest) -> String {
    let mut out = format!("{:<14} {:>7} {:>7} {:>7} {:>7}\n", "class", "train", "val", "test", "total");
    let splits: Vec<Vec<usize>> = Split::ASSIGNED.iter().map(|s| m.split_counts(*s)).collect();
    let totals = m.counts();
    for (c, name) in m.class_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>7} {:>7}",
            name, splits[0][c], splits[1][c], splits[2][c], totals[c]
        );
    }
    let col = |s: usize| splits[s].iter().sum::<usize>();
    let _ = writeln!(out, "{:<14} {:>7} {:>7} {:>7} {:>7}", "all", col(0), col(1), col(2), m.len());
    out
}

/// Loads, merges, audits, balances and splits the configured roots.
/// Writes `manifest.tsv` and `counts.txt` into `dir`.
pub fn ingest(settings: &Settings, dir: &Path) -> CliResult<DatasetManifest> {
    if settings.data_roots.is_empty() {
        return Err(CliError::Config("`data.roots` is empty".into()));
    }
    let mut parts = Vec::new();
    for root in &settings.data_roots {
        if !root.is_dir() {
            return Err(CliError::Io(format!("dataset root {} does not exist", root.display())));
        }
        // A root may lack some configured classes (a binary dataset inside
        // a three-class run) as long as two of them are present.
        let present: Vec<&String> = settings.classes.iter().filter(|c| root.join(c).is_dir()).collect();
        let missing: Vec<&String> = settings.classes.iter().filter(|c| !root.join(c).is_dir()).collect();
        if present.len() < 2 {
            return Err(CliError::Core(Error::Data(format!(
                "missing class directory {}",
                root.join(missing[0]).display()
            ))));
        }
        if !missing.is_empty() {
            eprintln!("note: {} has no {:?} directory; its labels are lifted into the configured classes", root.display(), missing);
        }
        parts.push(load_manifest(root, &present)?);
    }
    let merged = merge_datasets(&parts)?;
    let merged = restrict_classes(&merged, &settings.classes)?;
    let mut report = String::from("merged counts:\n");
    for (name, n) in merged.class_names.iter().zip(merged.counts()) {
        let _ = writeln!(report, "  {name}: {n}");
    }
    let _ = writeln!(report, "  total: {}", merged.len());
    let warnings = audit_counts(&merged, &settings.expected_counts, settings.expected_total);
    for w in &warnings {
        eprintln!("warning: {w}");
        let _ = writeln!(report, "warning: {w}");
    }
    let seed = settings.seed;
    let balanced = match settings.balance {
        Balance::Undersample => balance_classes(&merged, &mut Rng::new(derive_seed(seed, "balance", 0)))?,
        _ => merged,
    };
    let mut split = stratified_split(&balanced, settings.split, &mut Rng::new(derive_seed(seed, "split", 0)))?;
    if settings.balance == Balance::Oversample {
        split = oversample_train(&split, &mut Rng::new(derive_seed(seed, "oversample", 0)))?;
    }
    let split = split.with_seed(seed);
    report.push_str("\nafter balancing and splitting:\n");
    report.push_str(&counts_table(&split));
    split.write_to(dir.join("manifest.tsv"))?;
    write(&dir.join("counts.txt"), &report)?;
    Ok(split)
}

/// The configured manifest, or a fresh ingest into `dir`.
fn manifest(settings: &Settings, dir: &Path) -> CliResult<DatasetManifest> {
    match &settings.manifest {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Io(format!("manifest {} does not exist", path.display())));
            }
            let m = DatasetManifest::read_from(path)?;
            if m.split_records(Split::Train).is_empty() {
                return Err(CliError::Core(Error::Data(format!("{} has no training records", path.display()))));
            }
            m.write_to(dir.join("manifest.tsv"))?;
            Ok(m)
        }
        None => ingest(settings, dir),
    }
}

fn load_split(m: &DatasetManifest, split: Split, model: &ModelConfig) -> CliResult<SplitData> {
    let [h, w, _] = model.input_shape;
    Ok(SplitData::load(m, split, w, h)?)
}

fn check_classes(m: &DatasetManifest, model: &ModelConfig) -> CliResult<()> {
    if m.num_classes() != model.num_classes {
        return Err(CliError::Config(format!(
            "manifest has {} classes, model expects {}",
            m.num_classes(),
            model.num_classes
        )));
    }
    Ok(())
}

pub fn cmd_ingest(settings: &Settings, dir: &Path) -> CliResult<()> {
    let m = ingest(settings, dir)?;
    print!("{}", counts_table(&m));
    println!("manifest: {}", dir.join("manifest.tsv").display());
    Ok(())
}

/// Trains from scratch or from `resume`; writes checkpoints, `final.ckpt`,
/// `model.ostw` and `curves.csv`. Curves are written even when the
/// divergence guard stops the run.
pub fn cmd_train(settings: &Settings, dir: &Path, resume: Option<&Path>) -> CliResult<()> {
    let m = manifest(settings, dir)?;
    check_classes(&m, &settings.model)?;
    let train = load_split(&m, Split::Train, &settings.model)?;
    let val = load_split(&m, Split::Val, &settings.model)?;
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    let config = osteo_core::train::TrainConfig {
        checkpoint_dir: Some(ckpt_dir),
        ..settings.train_config()
    };
    let mut trainer = match resume {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Io(format!("checkpoint {} does not exist", path.display())));
            }
            Trainer::resume(settings.model.clone(), config, Checkpoint::load(path)?)?
        }
        None => Trainer::new(settings.model.clone(), config)?,
    };
    println!(
        "training {} parameters ({} trainable) on {} images, validating on {}",
        trainer.state.num_scalars(),
        trainer
            .state
            .iter()
            .filter(|(n, _)| !trainer.state.is_frozen(n))
            .map(|(_, t)| t.len())
            .sum::<usize>(),
        train.len(),
        val.len()
    );
    let outcome = trainer.run(&train, &val);
    export_curves(&trainer.history, dir)?;
    outcome?;
    trainer.checkpoint().save(dir.join("final.ckpt"))?;
    save_weights(&trainer.state, dir.join("model.ostw"))?;
    match trainer.history.last() {
        Some(r) => println!(
            "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        ),
        None => println!("no epochs run"),
    }
    println!("outputs: {}", dir.display());
    Ok(())
}

/// Evaluates a checkpoint on the test split; writes `confusion.csv`,
/// `report.txt` and the checkpoint's `curves.csv`.
pub fn cmd_eval(settings: &Settings, dir: &Path, checkpoint: Option<&Path>) -> CliResult<()> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| settings.eval_checkpoint.clone())
        .ok_or_else(|| CliError::Config("no checkpoint: pass --checkpoint or set `eval.checkpoint`".into()))?;
    if !path.is_file() {
        return Err(CliError::Io(format!("checkpoint {} does not exist", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    ckpt.state.check_against(&settings.model)?;
    let m = manifest(settings, dir)?;
    check_classes(&m, &settings.model)?;
    let test = load_split(&m, Split::Test, &settings.model)?;
    if test.is_empty() {
        return Err(CliError::Core(Error::Data("test split is empty".into())));
    }
    let result = evaluate_split(&settings.model, &ckpt.state, &test, 64)?;
    let cm = confusion_matrix(&result.predictions, &result.labels, &m.class_names)?;
    let report = metrics_with(&cm, settings.averaging)?;
    export_report(&cm, &report, dir)?;
    export_curves(&ckpt.history, dir)?;
    print!("{}", osteo_core::eval::classification_report(&report));
    println!("test loss {:.4}", result.loss);
    println!("outputs: {}", dir.display());
    Ok(())
}

/// Trains every grid cell; writes `grid.csv` and one curves file per cell.
pub fn cmd_gridsearch(settings: &Settings, dir: &Path) -> CliResult<()> {
    let m = manifest(settings, dir)?;
    check_classes(&m, &settings.model)?;
    let train = load_split(&m, Split::Train, &settings.model)?;
    let val = load_split(&m, Split::Val, &settings.model)?;
    let result = grid_search(&settings.grid, &settings.model, &settings.train_config(), &train, &val)?;
    let cells_dir = dir.join("grid");
    std::fs::create_dir_all(&cells_dir).map_err(|e| io_err(&cells_dir, e))?;
    let mut csv = String::from("lr,batch,final_val_acc,final_val_loss,status\n");
    let mut table = format!("{:>10} {:>6} {:>10} {:>10}  {}\n", "lr", "batch", "val_acc", "val_loss", "status");
    for (i, cell) in result.cells.iter().enumerate() {
        let last = cell.history.last();
        let acc = last.map_or(f64::NAN, |r| r.val_acc);
        let loss = last.map_or(f64::NAN, |r| r.val_loss);
        let status = match &cell.error {
            Some(e) => format!("failed: {e}"),
            None if i == result.best => "best".to_string(),
            None => "ok".to_string(),
        };
        let _ = writeln!(csv, "{:?},{},{:?},{:?},{}", cell.lr, cell.batch_size, acc, loss, status.replace(',', ";"));
        let _ = writeln!(table, "{:>10} {:>6} {:>10.4} {:>10.4}  {}", cell.lr, cell.batch_size, acc, loss, status);
        write(
            &cells_dir.join(format!("lr{}_b{}.csv", cell.lr, cell.batch_size)),
            &curves_csv(&cell.history),
        )?;
    }
    write(&dir.join("grid.csv"), &csv)?;
    print!("{table}");
    let best = result.best_cell();
    println!("best: lr {} batch {}", best.lr, best.batch_size);
    println!("outputs: {}", dir.display());
    Ok(())
}

/// Parses the hidden `--corrupt OP[:SCALE]` hook.
pub fn parse_fault(spec: &str) -> CliResult<(OpKind, f64)> {
    let (op, scale) = spec.split_once(':').unwrap_or((spec, "1.5"));
    let kind = op.parse::<OpKind>().map_err(|e| CliError::Config(e.to_string()))?;
    let scale = scale
        .parse::<f64>()
        .map_err(|_| CliError::Config(format!("bad fault scale `{scale}`")))?;
    Ok((kind, scale))
}

/// Checks every primitive, then the whole model at float64 against
/// central differences. Biases are drawn at random so no unit sits
/// exactly on a ReLU kink.
pub fn cmd_gradcheck(settings: &Settings, dir: &Path, fault: Option<(OpKind, f64)>) -> CliResult<()> {
    let options = GradCheckOptions {
        eps: settings.gradcheck_eps,
        ..GradCheckOptions::default()
    };
    let tol = settings.gradcheck_tolerance;
    let mut rows: Vec<(String, f64, usize, String)> = Vec::new();
    for (kind, report) in check_primitives(derive_seed(settings.seed, "gradcheck", 0), options, fault)? {
        rows.push((kind.name().to_string(), report.max_rel_error, report.coordinates, String::new()));
    }

    let cfg = &settings.gradcheck_model;
    let mut rng = Rng::new(derive_seed(settings.seed, "gradcheck", 1));
    let mut state: ModelState<f64> = ModelState::<f32>::init(cfg, &mut rng)?.cast();
    for (name, t) in state.iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.uniform_in(-0.1, 0.1);
            }
        }
    }
    if let Some(path) = &cfg.backbone.pretrained_weights {
        let mut loaded = state.cast::<f32>();
        loaded.load_backbone(path)?;
        state = loaded.cast();
    }
    let n = settings.gradcheck_batch.max(1);
    let [h, w, c] = cfg.input_shape;
    let batch = Tensor::from_fn(&[n, h, w, c], |_| rng.uniform())?;
    let classes = cfg.num_classes;
    let labels = Tensor::from_fn(&[n, classes], |i| f64::from(u8::from(i % classes == (i / classes) % classes)))?;
    let start = std::time::Instant::now();
    let report = gradcheck_model(cfg, &state, &batch, &labels, options, fault)?;
    let worst = report
        .worst
        .as_ref()
        .and_then(|w| state.names().nth(w.input).map(|name| format!("worst {name}[{}]", w.index)))
        .unwrap_or_default();
    let elapsed = start.elapsed().as_secs_f64();
    rows.push((
        format!("model ({} params)", state.num_scalars()),
        report.max_rel_error,
        report.coordinates,
        worst,
    ));

    let mut out = format!("{:<22} {:>14} {:>8}  {}\n", "check", "max_rel_error", "coords", "status");
    let mut failed = Vec::new();
    for (name, err, coords, note) in &rows {
        let ok = *err < tol;
        if !ok {
            failed.push(name.clone());
        }
        let line = format!(
            "{:<22} {:>14.3e} {:>8}  {} {}",
            name,
            err,
            coords,
            if ok { "ok" } else { "FAIL" },
            note
        );
        let _ = writeln!(out, "{}", line.trim_end());
    }
    let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let _ = writeln!(out, "max relative error {max:.3e} (tolerance {tol:e})");
    write(&dir.join("gradcheck.txt"), &out)?;
    print!("{out}");
    println!("model check took {elapsed:.1}s");
    if failed.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Verification(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

/// Writes a two-class synthetic texture dataset under `dir`.
pub fn cmd_synth(settings: &Settings, dir: &Path) -> CliResult<()> {
    if settings.classes.len() != 2 {
        return Err(CliError::Config("synth writes exactly two classes".into()));
    }
    let spec = TextureSpec {
        size: settings.synth_size,
        ..TextureSpec::default()
    };
    write_texture_dataset(dir, &settings.classes, &spec, settings.synth_per_class, settings.seed)?;
    println!(
        "wrote {} images per class ({}x{}) under {}",
        settings.synth_per_class,
        spec.size,
        spec.size,
        dir.display()
    );
    Ok(())
}

/// Reads `curves.csv` from a run directory.
pub fn read_curves(dir: &Path) -> CliResult<TrainHistory> {
    let path = dir.join("curves.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(osteo_core::eval::parse_curves_csv(&text)?)
}
