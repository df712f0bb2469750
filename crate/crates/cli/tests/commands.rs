use std::path::Path;
use std::process::Command;

use osteo_cli::read_curves;
use osteo_core::data::{DatasetManifest, Split};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn osteo(cwd: &Path, args: &[&str]) -> Run {
    osteo_env(cwd, args, &[])
}

fn osteo_env(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_osteo"))
        .args(args)
        .envs(env.iter().copied())
        .current_dir(cwd)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into(),
        stderr: String::from_utf8_lossy(&out.stderr).into(),
    }
}

fn touch_tree(root: &Path, classes: &[(&str, usize)]) {
    for (name, n) in classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..*n {
            std::fs::write(dir.join(format!("{i:04}.png")), b"").unwrap();
        }
    }
}

/// Synthetic two-class dataset under `dir/data` plus a reduced-model config.
fn synthetic_workspace(dir: &Path, per_class: usize, extra: &str) {
    let cfg = format!("data.roots = data\nmodel.preset = reduced\nsynth.per_class = {per_class}\n{extra}");
    std::fs::write(dir.join("run.cfg"), cfg).unwrap();
    let run = osteo(dir, &["synth", "--config", "run.cfg", "--out", "data", "--seed", "21"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
}

#[test]
fn ingest_fixture_tree() {
    let dir = tempfile::tempdir().unwrap();
    touch_tree(&dir.path().join("fixture"), &[("Normal", 3), ("Osteoporosis", 3)]);
    std::fs::write(dir.path().join("a.cfg"), "data.roots = fixture\n").unwrap();
    let run = osteo(dir.path(), &["ingest", "--config", "a.cfg", "--out", "out"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let m = DatasetManifest::read_from(dir.path().join("out/manifest.tsv")).unwrap();
    assert_eq!(m.len(), 6);
    for split in Split::ASSIGNED {
        assert_eq!(m.split_counts(split), vec![1, 1]);
    }
    assert!(dir.path().join("out/counts.txt").is_file());
    assert!(dir.path().join("out/config.txt").is_file());
}

#[test]
fn ingest_audits_declared_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    touch_tree(&root.join("kxo"), &[("Normal", 36), ("Osteopenia", 154), ("Osteoporosis", 49)]);
    touch_tree(&root.join("okx"), &[("Normal", 186), ("Osteoporosis", 186)]);
    std::fs::write(
        root.join("t2.cfg"),
        "data.roots = kxo, okx\ndata.classes = Normal,Osteopenia,Osteoporosis\n\
         data.expected_counts = 222,154,235\ndata.expected_total = 600\n",
    )
    .unwrap();
    let run = osteo(root, &["ingest", "--config", "t2.cfg", "--out", "out"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stderr.contains("warning: computed total 611 differs from declared total 600"), "{}", run.stderr);
    let counts = std::fs::read_to_string(root.join("out/counts.txt")).unwrap();
    assert!(counts.contains("Osteopenia: 154") && counts.contains("total: 611"), "{counts}");
    assert!(!run.stderr.contains("class counts"), "matching class counts must not warn");
    let m = DatasetManifest::read_from(root.join("out/manifest.tsv")).unwrap();
    assert_eq!(m.counts(), vec![154, 154, 154]);
}

#[test]
fn ingest_errors_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("missing.cfg"), "data.roots = nowhere\n").unwrap();
    let run = osteo(root, &["ingest", "--config", "missing.cfg", "--out", "o"]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("nowhere"), "{}", run.stderr);

    touch_tree(&root.join("half"), &[("Normal", 3)]);
    std::fs::write(root.join("half.cfg"), "data.roots = half\n").unwrap();
    let run = osteo(root, &["ingest", "--config", "half.cfg", "--out", "o"]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("Osteoporosis"), "{}", run.stderr);

    for bad in ["colour = blue\n", "train.epochs = many\n", "data.classes = OnlyOne\n", "model.batch_norm = true\n"] {
        std::fs::write(root.join("bad.cfg"), bad).unwrap();
        let run = osteo(root, &["ingest", "--config", "bad.cfg", "--out", "o"]);
        assert_eq!(run.code, 2, "{bad}: {}", run.stderr);
    }
    assert_eq!(osteo(root, &["ingest", "--config", "absent.cfg"]).code, 3);
    assert_eq!(osteo(root, &["frobnicate"]).code, 2);
    assert_eq!(osteo_env(root, &["ingest"], &[("OSTEO_THREADS", "zero")]).code, 2);
}

#[test]
fn run_directory_is_named_by_hash_and_time() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    touch_tree(&root.join("fixture"), &[("Normal", 3), ("Osteoporosis", 3)]);
    std::fs::write(root.join("a.cfg"), "data.roots = fixture\nout_dir = runs\n").unwrap();
    let run = osteo_env(root, &["ingest", "--config", "a.cfg"], &[("OSTEO_THREADS", "1")]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let entries: Vec<String> = std::fs::read_dir(root.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries.len(), 1);
    let (hash, stamp) = entries[0].split_once('-').unwrap();
    assert_eq!(hash.len(), 12);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(stamp.ends_with('Z') && stamp.contains('T'), "{stamp}");
}

#[test]
fn zero_epochs_writes_header_only_curves() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_workspace(dir.path(), 6, "train.epochs = 0\n");
    let run = osteo(dir.path(), &["train", "--config", "run.cfg", "--out", "r"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let curves = std::fs::read_to_string(dir.path().join("r/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1);
    assert!(dir.path().join("r/final.ckpt").is_file());
}

#[test]
fn train_then_eval_a_perfect_model() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synthetic_workspace(root, 40, "train.epochs = 30\ntrain.lr = 0.003\ntrain.batch = 16\n");
    let run = osteo(root, &["train", "--config", "run.cfg", "--out", "r"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    for file in ["curves.csv", "final.ckpt", "model.ostw", "manifest.tsv", "checkpoints/best.ckpt", "checkpoints/epoch_0010.ckpt"] {
        assert!(root.join("r").join(file).is_file(), "missing {file}");
    }

    let run = osteo(root, &["eval", "--config", "run.cfg", "--checkpoint", "r/final.ckpt", "--out", "e"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    for file in ["confusion.csv", "report.txt", "curves.csv"] {
        assert!(root.join("e").join(file).is_file(), "missing {file}");
    }
    let report = std::fs::read_to_string(root.join("e/report.txt")).unwrap();
    assert_eq!(report.matches("100.00").count(), 3 * 3 + 1, "{report}");
    assert_eq!(read_curves(&root.join("e")).unwrap().len(), 30);
    let confusion = std::fs::read_to_string(root.join("e/confusion.csv")).unwrap();
    assert_eq!(confusion, "true\\pred,Normal,Osteoporosis\nNormal,8,0\nOsteoporosis,0,8\n");

    let run = osteo(root, &["eval", "--config", "run.cfg", "--checkpoint", "r/none.ckpt", "--out", "e2"]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("none.ckpt"));
    assert_eq!(osteo(root, &["eval", "--config", "run.cfg", "--out", "e3"]).code, 2);

    // A checkpoint for a different architecture is a configuration error.
    std::fs::write(root.join("std.cfg"), "data.roots = data\n").unwrap();
    let run = osteo(root, &["eval", "--config", "std.cfg", "--checkpoint", "r/final.ckpt", "--out", "e4"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synthetic_workspace(root, 8, "train.epochs = 3\ntrain.checkpoint_every = 1\ntrain.batch = 8\n");
    assert_eq!(osteo(root, &["train", "--config", "run.cfg", "--out", "full"]).code, 0);
    let run = osteo(
        root,
        &["train", "--config", "run.cfg", "--out", "resumed", "--resume", "full/checkpoints/epoch_0002.ckpt"],
    );
    assert_eq!(run.code, 0, "{}", run.stderr);
    let a = read_curves(&root.join("full")).unwrap();
    let b = read_curves(&root.join("resumed")).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);

    let run = osteo(root, &["train", "--config", "run.cfg", "--out", "x", "--resume", "full/nothing.ckpt"]);
    assert_eq!(run.code, 3);
}

#[test]
fn divergence_exits_with_verification_failure() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_workspace(dir.path(), 8, "train.epochs = 6\ntrain.divergence_factor = 0\ntrain.batch = 4\n");
    let run = osteo(dir.path(), &["train", "--config", "run.cfg", "--out", "r"]);
    assert_eq!(run.code, 1, "{}\n{}", run.stdout, run.stderr);
    assert!(run.stderr.contains("diverged at epoch 3"), "{}", run.stderr);
    assert_eq!(read_curves(&dir.path().join("r")).unwrap().len(), 3);
}

#[test]
fn gridsearch_tables_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synthetic_workspace(root, 10, "train.epochs = 2\ntrain.batch = 8\n");

    std::fs::write(root.join("one.cfg"), "data.roots = data\nmodel.preset = reduced\ntrain.epochs = 1\ngrid.lrs = 0.003\ngrid.batches = 4\n").unwrap();
    let run = osteo(root, &["gridsearch", "--config", "one.cfg", "--out", "g1"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("best: lr 0.003 batch 4"), "{}", run.stdout);

    std::fs::write(
        root.join("four.cfg"),
        "data.roots = data\nmodel.preset = reduced\ntrain.epochs = 2\ngrid.lrs = 0.01,0.001\ngrid.batches = 4,8\n",
    )
    .unwrap();
    let run = osteo(root, &["gridsearch", "--config", "four.cfg", "--out", "g4"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let csv = std::fs::read_to_string(root.join("g4/grid.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let best: Vec<&Vec<&str>> = rows.iter().filter(|r| r[4] == "best").collect();
    assert_eq!(best.len(), 1);
    let best_acc: f64 = best[0][2].parse().unwrap();
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() <= best_acc));
    assert_eq!(std::fs::read_dir(root.join("g4/grid")).unwrap().count(), 4);

    std::fs::write(root.join("bad.cfg"), "data.roots = data\ngrid.batches = 4,,8\n").unwrap();
    assert_eq!(osteo(root, &["gridsearch", "--config", "bad.cfg", "--out", "gb"]).code, 2);
}

#[test]
fn gradcheck_reports_every_op_and_fails_on_a_corrupted_backward() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gc.cfg"), "gradcheck.batch = 1\n").unwrap();
    let run = osteo(dir.path(), &["gradcheck", "--config", "gc.cfg", "--out", "g", "--corrupt", "maxpool2d:2"]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    let summary = std::fs::read_to_string(dir.path().join("g/gradcheck.txt")).unwrap();
    for op in ["conv2d", "relu", "maxpool2d", "dense", "sigmoid", "softmax", "dropout", "cross_entropy", "model"] {
        assert!(summary.lines().any(|l| l.starts_with(op)), "{op} missing from\n{summary}");
    }
    let failing: Vec<&str> = summary.lines().filter(|l| l.contains("FAIL")).collect();
    assert_eq!(failing.len(), 2, "{summary}");
    assert!(failing[0].starts_with("maxpool2d") && failing[1].starts_with("model"));
    assert!(run.stdout.trim_end().ends_with("FAIL"));

    assert_eq!(osteo(dir.path(), &["gradcheck", "--out", "g", "--corrupt", "teleport"]).code, 2);
}
