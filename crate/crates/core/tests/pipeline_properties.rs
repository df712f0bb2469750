use std::path::{Path, PathBuf};

use osteo_core::data::{
    audit_counts, balance_classes, batch_iter, load_manifest, merge_datasets, split_sizes, stratified_split,
    BatchOptions, DatasetManifest, SampleRecord, Split, SplitData, BINARY_NAMES, MULTICLASS_NAMES,
};
use osteo_core::preprocess::{augment, normalize, resize, AugmentPolicy, RawImage};
use osteo_core::{Rng, Tensor};
use proptest::prelude::*;

fn touch_tree(root: &Path, classes: &[(&str, usize)]) {
    for (name, n) in classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..*n {
            std::fs::write(dir.join(format!("{i:04}.png")), b"").unwrap();
        }
    }
}

fn synthetic_manifest(source: &str, names: &[&str], counts: &[usize]) -> DatasetManifest {
    let mut records = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            records.push(SampleRecord {
                path: PathBuf::from(format!("{source}/{}/{i:05}.png", names[label])),
                label,
                source: source.into(),
                split: Split::Unassigned,
            });
        }
    }
    DatasetManifest::new(records, names.iter().map(|s| s.to_string()).collect(), 0).unwrap()
}

#[test]
fn manifest_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    touch_tree(dir.path(), &[("Normal", 3), ("Osteoporosis", 3)]);
    std::fs::write(dir.path().join("Normal").join("notes.txt"), b"x").unwrap();
    let m = load_manifest(dir.path(), &BINARY_NAMES).unwrap();
    assert_eq!(m.len(), 6);
    assert_eq!(m.counts(), vec![3, 3]);
    let paths: Vec<_> = m.records.iter().map(|r| r.path.clone()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);

    let err = load_manifest(dir.path(), &MULTICLASS_NAMES).unwrap_err().to_string();
    assert!(err.contains("Osteopenia"), "{err}");
}

#[test]
fn okx_binary_shaped_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    touch_tree(dir.path(), &[("Normal", 186), ("Osteoporosis", 186)]);
    let m = load_manifest(dir.path(), &BINARY_NAMES).unwrap();
    assert_eq!(m.counts(), vec![186, 186]);
    assert_eq!(m.len(), 372);
}

#[test]
fn merged_counts_and_total_audit() {
    let okx_binary = synthetic_manifest("okx-binary", &BINARY_NAMES, &[186, 186]);
    let kxo = synthetic_manifest("kxo-mendeley", &MULTICLASS_NAMES, &[36, 154, 49]);
    let okx_multi = synthetic_manifest("okx-multi", &MULTICLASS_NAMES, &[780, 374, 793]);
    let merged = merge_datasets(&[okx_binary, kxo.clone(), okx_multi]).unwrap();
    assert_eq!(merged.counts(), vec![1002, 528, 1028]);
    assert_eq!(merged.len(), 2558);
    let warnings = audit_counts(&merged, &[1002, 528, 1028], Some(2030));
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("2558") && warnings[0].contains("2030"));

    let balanced = balance_classes(&kxo, &mut Rng::new(4)).unwrap();
    assert_eq!(balanced.counts(), vec![36, 36, 36]);
}

fn check_split(m: &DatasetManifest, split: &DatasetManifest) {
    assert_eq!(split.len(), m.len());
    assert!(split.records.iter().all(|r| r.split != Split::Unassigned));
    let mut paths: Vec<_> = split.records.iter().map(|r| r.path.clone()).collect();
    paths.sort();
    paths.dedup();
    assert_eq!(paths.len(), m.len(), "splits overlap or lose records");
    for (class, &n) in m.counts().iter().enumerate() {
        for (k, s) in Split::ASSIGNED.iter().enumerate() {
            let got = split.split_counts(*s)[class] as f64;
            let exact = n as f64 * [0.6, 0.2, 0.2][k];
            assert!((got - exact).abs() <= 1.0 + 1e-9, "class {class} {s}: {got} vs {exact}");
            assert!(got >= 1.0);
        }
    }
}

#[test]
fn fifty_random_manifests() {
    let mut rng = Rng::new(2024);
    for case in 0..50 {
        let classes = 2 + rng.below(2);
        let counts: Vec<usize> = (0..classes).map(|_| 3 + rng.below(60)).collect();
        let m = synthetic_manifest("r", &MULTICLASS_NAMES[..classes], &counts).with_seed(case);
        let split = stratified_split(&m, [0.6, 0.2, 0.2], &mut Rng::new(case)).unwrap();
        check_split(&m, &split);
        assert_eq!(split, stratified_split(&m, [0.6, 0.2, 0.2], &mut Rng::new(case)).unwrap());

        let balanced = balance_classes(&m, &mut Rng::new(case)).unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(balanced.counts().iter().all(|&c| c == min));
        assert!(balanced.records.iter().all(|r| m.records.contains(r)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_sizes_partition(n in 3usize..500) {
        let s = split_sizes(n, [0.6, 0.2, 0.2]);
        prop_assert_eq!(s.iter().sum::<usize>(), n);
        for (k, f) in [0.6, 0.2, 0.2].iter().enumerate() {
            prop_assert!((s[k] as f64 - n as f64 * f).abs() <= 1.0 + 1e-9);
            prop_assert!(s[k] >= 1);
        }
    }

    #[test]
    fn resize_normalize_contract(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let pixels = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
        let img = RawImage::new(w, h, 3, pixels).unwrap();
        let t = normalize(&resize(&img, 24, 24), 24, 24).unwrap();
        prop_assert_eq!(t.shape(), &[24, 24, 3]);
        prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augment_preserves_shape_and_range(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = Tensor::from_fn(&[16, 20, 3], |_| rng.uniform() as f32).unwrap();
        let (lo, hi) = img.data().iter().fold((1.0f32, 0.0f32), |(a, b), &v| (a.min(v), b.max(v)));
        let policy = AugmentPolicy::default();
        let a = augment(&img, &policy, &mut Rng::new(seed ^ 1)).unwrap();
        let b = augment(&img, &policy, &mut Rng::new(seed ^ 1)).unwrap();
        prop_assert!(a.bitwise_eq(&b));
        prop_assert_eq!(a.shape(), img.shape());
        prop_assert!(a.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}

#[test]
fn train_batches_are_augmented_and_exhaustive() {
    let mut rng = Rng::new(5);
    let images: Vec<RawImage> = (0..10)
        .map(|_| RawImage::new(8, 8, 3, (0..192).map(|_| rng.below(256) as u8).collect()).unwrap())
        .collect();
    let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
    let train = SplitData::from_images(Split::Train, images.clone(), labels.clone(), 2).unwrap();
    let val = SplitData::from_images(Split::Val, images, labels, 2).unwrap();
    let options = BatchOptions {
        batch_size: 3,
        shuffle: true,
        augment: AugmentPolicy::default(),
    };
    for epoch in 0..3 {
        let batches: Vec<_> = batch_iter(&train, &options, 1, epoch).unwrap().map(Result::unwrap).collect();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let plain: Vec<_> = batch_iter(&val, &options, 1, epoch).unwrap().map(Result::unwrap).collect();
        assert!(!batches[0].images.bitwise_eq(&plain[0].images));
    }
    let empty = SplitData::from_images(Split::Test, vec![], vec![], 2).unwrap();
    assert!(batch_iter(&empty, &options, 0, 0).is_err());
}
