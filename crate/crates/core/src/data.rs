//! Class-folder datasets: manifests, balancing, stratified splits, merging
//! and deterministic batching.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::{self, AugmentPolicy, RawImage};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Class vocabulary of the three-class datasets.
pub const MULTICLASS_NAMES: [&str; 3] = ["Normal", "Osteopenia", "Osteoporosis"];
/// Class vocabulary of the binary datasets.
pub const BINARY_NAMES: [&str; 2] = ["Normal", "Osteoporosis"];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub label: usize,
    pub source: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, class_names: Vec<String>, seed: u64) -> Result<Self> {
        let m = Self {
            records,
            class_names,
            seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records per class.
    pub fn counts(&self) -> Vec<usize> {
        count_labels(self.records.iter(), self.num_classes())
    }

    /// Records per class within one split.
    pub fn split_counts(&self, split: Split) -> Vec<usize> {
        count_labels(self.records.iter().filter(|r| r.split == split), self.num_classes())
    }

    /// Records of one split, sorted by path.
    pub fn split_records(&self, split: Split) -> Vec<&SampleRecord> {
        let mut out: Vec<_> = self.records.iter().filter(|r| r.split == split).collect();
        out.sort_by(|a, b| a.path.cmp(&b.path));
        out
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.class_names.len()) {
            return Err(Error::Data(format!(
                "manifests need 2 or 3 classes, got {:?}",
                self.class_names
            )));
        }
        if let Some(r) = self.records.iter().find(|r| r.label >= self.num_classes()) {
            return Err(Error::Data(format!(
                "{}: label {} outside {} classes",
                r.path.display(),
                r.label,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Writes the manifest as `path TAB label TAB source TAB split` lines
    /// after `#`-prefixed class and seed headers.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&format!("# classes\t{}\n", self.class_names.join("\t")));
        out.push_str(&format!("# seed\t{}\n", self.seed));
        for r in &self.records {
            let p = r.path.to_str().ok_or_else(|| Error::Data(format!("non UTF-8 path {:?}", r.path)))?;
            if p.contains(['\t', '\n']) || r.source.contains(['\t', '\n']) {
                return Err(Error::Data(format!("tab or newline in record {p:?}")));
            }
            out.push_str(&format!("{p}\t{}\t{}\t{}\n", self.class_names[r.label], r.source, r.split));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Data(format!("{}:{}: {msg}", path.display(), line + 1));
        let mut class_names = None;
        let mut seed = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix("# ") {
                let mut fields = header.split('\t');
                match fields.next() {
                    Some("classes") => class_names = Some(fields.map(str::to_string).collect::<Vec<_>>()),
                    Some("seed") => {
                        seed = Some(fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(i, "bad seed"))?)
                    }
                    _ => return Err(bad(i, "unknown header")),
                }
                continue;
            }
            let names = class_names.as_ref().ok_or_else(|| bad(i, "record before `# classes` header"))?;
            let fields: Vec<&str> = line.split('\t').collect();
            let [p, label, source, split] = fields[..] else {
                return Err(bad(i, "expected 4 tab-separated fields"));
            };
            let label = names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| bad(i, &format!("unknown class `{label}`")))?;
            records.push(SampleRecord {
                path: PathBuf::from(p),
                label,
                source: source.to_string(),
                split: split.parse().map_err(|_| bad(i, &format!("unknown split `{split}`")))?,
            });
        }
        let class_names = class_names.ok_or_else(|| Error::Data(format!("{}: no class header", path.display())))?;
        Self::new(records, class_names, seed.unwrap_or(0))
    }
}

fn count_labels<'a>(records: impl Iterator<Item = &'a SampleRecord>, classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for r in records {
        counts[r.label] += 1;
    }
    counts
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Enumerates `root/<class>/*.{png,jpg,jpeg}`. Records are sorted by path
/// and tagged with the root's directory name as source.
pub fn load_manifest(root: impl AsRef<Path>, class_names: &[impl AsRef<str>]) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let source = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| root.display().to_string());
    let mut records = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class.as_ref());
        if !dir.is_dir() {
            return Err(Error::Data(format!("missing class directory {}", dir.display())));
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let before = records.len();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_file() && is_image(&path) {
                records.push(SampleRecord {
                    path,
                    label,
                    source: source.clone(),
                    split: Split::Unassigned,
                });
            }
        }
        if records.len() == before {
            return Err(Error::Data(format!("class directory {} has no images", dir.display())));
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    DatasetManifest::new(
        records,
        class_names.iter().map(|c| c.as_ref().to_string()).collect(),
        0,
    )
}

/// Randomly undersamples every class to the minority count. Retained
/// records keep their manifest order.
pub fn balance_classes(m: &DatasetManifest, rng: &mut Rng) -> Result<DatasetManifest> {
    let counts = m.counts();
    let target = *counts.iter().min().expect("at least two classes");
    if target == 0 {
        return Err(Error::Data(format!("cannot balance: class counts {counts:?}")));
    }
    let mut keep = vec![false; m.records.len()];
    for class in 0..m.num_classes() {
        let mut idx: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].label == class).collect();
        rng.shuffle(&mut idx);
        for &i in &idx[..target] {
            keep[i] = true;
        }
    }
    let records = m.records.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect();
    DatasetManifest::new(records, m.class_names.clone(), m.seed)
}

/// Duplicates random train records of minority classes until every class
/// has as many train records as the largest one. Other splits are left
/// alone, so no duplicate can leak across splits.
pub fn oversample_train(m: &DatasetManifest, rng: &mut Rng) -> Result<DatasetManifest> {
    let counts = m.split_counts(Split::Train);
    let target = *counts.iter().max().expect("at least two classes");
    let mut records = m.records.clone();
    for (class, &count) in counts.iter().enumerate() {
        let pool: Vec<&SampleRecord> = m
            .records
            .iter()
            .filter(|r| r.split == Split::Train && r.label == class)
            .collect();
        if pool.is_empty() {
            return Err(Error::Data(format!("class `{}` has no train records", m.class_names[class])));
        }
        for _ in count..target {
            records.push(pool[rng.below(pool.len())].clone());
        }
    }
    DatasetManifest::new(records, m.class_names.clone(), m.seed)
}

/// Split sizes for `n` items by largest-remainder rounding. Ties in the
/// remainder go to the earlier split. When `n >= 3` every split receives
/// at least one item, taken from the largest split if rounding left one
/// empty.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| n as f64 * f);
    let mut sizes = exact.map(|e| (e + 1e-9).floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).expect("finite fractions").then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if n >= 3 {
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let largest = (0..3).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).expect("three splits");
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
    }
    sizes
}

/// Per class: shuffle, then cut into train/val/test by [`split_sizes`].
pub fn stratified_split(m: &DatasetManifest, fractions: [f64; 3], rng: &mut Rng) -> Result<DatasetManifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut out = m.clone();
    for class in 0..m.num_classes() {
        let mut idx: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].label == class).collect();
        if idx.len() < 3 {
            return Err(Error::Data(format!(
                "class `{}` has {} samples; at least 3 are needed for train/val/test",
                m.class_names[class],
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let [n_train, n_val, _] = split_sizes(idx.len(), fractions);
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Concatenates manifests. Differing vocabularies are reconciled by class
/// name into the widest one, which must contain every other vocabulary in
/// the same relative order (binary Normal/Osteoporosis lifts into the
/// three-class space with Osteopenia absent).
pub fn merge_datasets(manifests: &[DatasetManifest]) -> Result<DatasetManifest> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::Data("nothing to merge".into()))?;
    let target = manifests
        .iter()
        .map(|m| &m.class_names)
        .max_by_key(|names| names.len())
        .expect("nonempty")
        .clone();
    let mut records = Vec::new();
    for m in manifests {
        let map = m
            .class_names
            .iter()
            .map(|n| target.iter().position(|t| t == n))
            .collect::<Option<Vec<usize>>>()
            .filter(|map| map.windows(2).all(|w| w[0] < w[1]))
            .ok_or_else(|| {
                Error::Data(format!(
                    "conflicting class vocabularies {:?} and {:?}",
                    m.class_names, target
                ))
            })?;
        records.extend(m.records.iter().map(|r| SampleRecord {
            label: map[r.label],
            ..r.clone()
        }));
    }
    DatasetManifest::new(records, target, first.seed)
}

/// Restricts a manifest to a sub-vocabulary, dropping records of other
/// classes (e.g. three-class data viewed as Normal vs Osteoporosis).
pub fn restrict_classes(m: &DatasetManifest, class_names: &[impl AsRef<str>]) -> Result<DatasetManifest> {
    let map: Vec<Option<usize>> = m
        .class_names
        .iter()
        .map(|n| class_names.iter().position(|c| c.as_ref() == n))
        .collect();
    for c in class_names {
        if !m.class_names.iter().any(|n| n == c.as_ref()) {
            return Err(Error::Data(format!("class `{}` not in {:?}", c.as_ref(), m.class_names)));
        }
    }
    let records = m
        .records
        .iter()
        .filter_map(|r| map[r.label].map(|label| SampleRecord { label, ..r.clone() }))
        .collect();
    DatasetManifest::new(
        records,
        class_names.iter().map(|c| c.as_ref().to_string()).collect(),
        m.seed,
    )
}

/// Compares counts against declared expectations and returns one warning
/// per disagreement.
pub fn audit_counts(m: &DatasetManifest, expected: &[usize], expected_total: Option<usize>) -> Vec<String> {
    let counts = m.counts();
    let total: usize = counts.iter().sum();
    let mut warnings = Vec::new();
    if !expected.is_empty() && expected != counts.as_slice() {
        warnings.push(format!("class counts {counts:?} differ from expected {expected:?}"));
    }
    if let Some(t) = expected_total {
        if t != total {
            warnings.push(format!(
                "computed total {total} differs from declared total {t} (class sums {})",
                expected.iter().sum::<usize>()
            ));
        }
    }
    warnings
}

/// Decoded and resized images of one split, sorted by path.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub split: Split,
    pub paths: Vec<PathBuf>,
    pub images: Vec<RawImage>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl SplitData {
    /// Decodes every record of `split` in parallel and resizes to
    /// `width x height`.
    pub fn load(m: &DatasetManifest, split: Split, width: usize, height: usize) -> Result<Self> {
        let records = m.split_records(split);
        let images = records
            .par_iter()
            .map(|r| preprocess::read_image(&r.path).map(|img| preprocess::resize(&img, width, height)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            split,
            paths: records.iter().map(|r| r.path.clone()).collect(),
            labels: records.iter().map(|r| r.label).collect(),
            images,
            num_classes: m.num_classes(),
        })
    }

    /// In-memory split (no files behind it).
    pub fn from_images(split: Split, images: Vec<RawImage>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() || labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::Data("image/label mismatch".into()));
        }
        Ok(Self {
            split,
            paths: (0..images.len()).map(|i| PathBuf::from(format!("mem/{i:06}"))).collect(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[n, h, w, 3]` in `[0, 1]`.
    pub images: Tensor<f32>,
    /// `[n, classes]` one-hot.
    pub labels: Tensor<f32>,
    /// Positions within the split.
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: AugmentPolicy,
}

/// Iterator over one epoch's batches.
pub struct BatchIter<'a> {
    data: &'a SplitData,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: Option<(&'a AugmentPolicy, u64)>,
}

/// Batches one epoch of `data`. The order is path order, or a permutation
/// seeded by `(seed, epoch)` when shuffling. Augmentation runs only on the
/// train split, with sample `i` seeded by `base ^ i` where `base` is
/// derived from `(seed, epoch)`.
pub fn batch_iter<'a>(data: &'a SplitData, options: &'a BatchOptions, seed: u64, epoch: u64) -> Result<BatchIter<'a>> {
    if data.is_empty() {
        return Err(Error::Data(format!("{} split is empty", data.split)));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if options.shuffle {
        Rng::new(derive_seed(seed, "shuffle", epoch)).shuffle(&mut order);
    }
    let augment = (data.split == Split::Train && options.augment.enabled)
        .then(|| (&options.augment, derive_seed(seed, "augment", epoch)));
    Ok(BatchIter {
        data,
        order,
        pos: 0,
        batch_size: options.batch_size,
        augment,
    })
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn build(&self, indices: &[usize]) -> Result<Batch> {
        let data = self.data;
        let first = &data.images[indices[0]];
        let (h, w) = (first.height, first.width);
        let samples = indices
            .par_iter()
            .map(|&i| {
                let img = preprocess::normalize(&data.images[i], w, h)?;
                match self.augment {
                    Some((policy, base)) => preprocess::augment(&img, policy, &mut Rng::new(base ^ i as u64)),
                    None => Ok(img),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pixels = Vec::with_capacity(indices.len() * h * w * 3);
        for s in samples {
            pixels.extend_from_slice(s.data());
        }
        let c = data.num_classes;
        let mut labels = vec![0.0; indices.len() * c];
        for (row, &i) in indices.iter().enumerate() {
            labels[row * c + data.labels[i]] = 1.0;
        }
        Ok(Batch {
            images: Tensor::new(&[indices.len(), h, w, 3], pixels)?,
            labels: Tensor::new(&[indices.len(), c], labels)?,
            indices: indices.to_vec(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.build(&indices))
    }
}

/// Class counts keyed by name, for reports.
pub fn named_counts(m: &DatasetManifest) -> BTreeMap<String, usize> {
    m.class_names.iter().cloned().zip(m.counts()).collect()
}
