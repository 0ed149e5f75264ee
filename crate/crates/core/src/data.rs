//! CIFAR-10/100 binary ingestion, splitting and a synthetic stand-in.
//!
//! Pixels are kept as the raw bytes of the source files, already transposed
//! to NHWC, and normalised (`byte / 255`) only when a batch is materialised.
//! The stored bytes and the normalised values therefore correspond exactly.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
pub const CIFAR10_RECORD: usize = 1 + IMAGE_BYTES;
pub const CIFAR100_RECORD: usize = 2 + IMAGE_BYTES;
/// Images held out from the end of the training files for validation.
pub const VALIDATION_LEN: usize = 10_000;

/// Environment variable consulted for the CIFAR directory when no path is given.
pub const DATA_DIR_ENV: &str = "PILU_DATA_DIR";

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    /// NHWC bytes, `IMAGE_BYTES` per image.
    pixels: Vec<u8>,
    labels: Vec<usize>,
    num_classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Assembles a dataset from NHWC bytes (`IMAGE_BYTES` per image), labels
    /// and split index lists.
    pub fn new(
        name: impl Into<String>,
        pixels: Vec<u8>,
        labels: Vec<usize>,
        num_classes: usize,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::InvalidArgument("pixel/label count mismatch".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} >= {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            pixels,
            labels,
            num_classes,
            train,
            val,
            test,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Total stored images across all splits.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Storage indices of a split, in order.
    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Raw NHWC bytes of one image.
    pub fn image_bytes(&self, index: usize) -> &[u8] {
        &self.pixels[index * IMAGE_BYTES..(index + 1) * IMAGE_BYTES]
    }

    /// Normalised `(n, 32, 32, 3)` batch for the given storage indices.
    pub fn images(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        for &i in indices {
            data.extend(self.image_bytes(i).iter().map(|&b| b as f64 / 255.0));
        }
        Tensor::from_vec(&[indices.len(), IMAGE_SIDE, IMAGE_SIDE, IMAGE_CHANNELS], data)
            .expect("non-empty batch")
    }

    /// Per-class image counts within a split.
    pub fn class_histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in self.split(split) {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// One-hot `(n, k)` encoding of class ids.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    if labels.is_empty() || k == 0 {
        return Err(Error::InvalidArgument(
            "one_hot needs at least one label and class".into(),
        ));
    }
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (row, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        t.data_mut()[row * k + l] = 1.0;
    }
    Ok(t)
}

/// Appends CHW-planar pixels as NHWC.
fn push_transposed(planar: &[u8], out: &mut Vec<u8>) {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for p in 0..plane {
        for c in 0..IMAGE_CHANNELS {
            out.push(planar[c * plane + p]);
        }
    }
}

struct Records {
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

/// Parses one binary file. `label_offset` selects which leading byte is the
/// class (0 for CIFAR-10, 1 for the fine CIFAR-100 label).
fn read_records(path: &Path, record: usize, label_offset: usize, num_classes: usize) -> Result<Records> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Dataset {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(bad(format!(
            "size {} is not a positive multiple of the {record}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    let header = record - IMAGE_BYTES;
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_offset] as usize;
        if label >= num_classes {
            return Err(bad(format!("record {i}: label {label} >= {num_classes}")));
        }
        labels.push(label);
        push_transposed(&rec[header..], &mut pixels);
    }
    Ok(Records { pixels, labels })
}

/// Looks for the files in `dir` or in the archive's usual subdirectory.
fn resolve(dir: &Path, sub: &str, first: &str) -> PathBuf {
    let nested = dir.join(sub);
    if !dir.join(first).exists() && nested.join(first).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn assemble(
    name: &str,
    train: Records,
    test: Records,
    num_classes: usize,
    val_len: usize,
) -> Result<Dataset> {
    let n_train = train.labels.len();
    if val_len >= n_train {
        return Err(Error::InvalidArgument(format!(
            "{n_train} training images cannot hold out {val_len} for validation"
        )));
    }
    let n_test = test.labels.len();
    let mut pixels = train.pixels;
    pixels.extend(test.pixels);
    let mut labels = train.labels;
    labels.extend(test.labels);
    let cut = n_train - val_len;
    Dataset::new(
        name,
        pixels,
        labels,
        num_classes,
        (0..cut).collect(),
        (cut..n_train).collect(),
        (n_train..n_train + n_test).collect(),
    )
}

/// Loads the CIFAR-10 binary distribution: train = first 40,000 of the five
/// training batches, val = last 10,000, test = `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    load_cifar10_with(dir, VALIDATION_LEN)
}

/// As [`load_cifar10`] with a custom validation hold-out size.
pub fn load_cifar10_with(dir: &Path, val_len: usize) -> Result<Dataset> {
    let dir = resolve(dir, "cifar-10-batches-bin", CIFAR10_TRAIN_FILES[0]);
    let mut train = Records {
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    for f in CIFAR10_TRAIN_FILES {
        let r = read_records(&dir.join(f), CIFAR10_RECORD, 0, 10)?;
        train.pixels.extend(r.pixels);
        train.labels.extend(r.labels);
    }
    let test = read_records(&dir.join(CIFAR10_TEST_FILE), CIFAR10_RECORD, 0, 10)?;
    assemble("cifar10", train, test, 10, val_len)
}

/// Loads the CIFAR-100 binary distribution using the fine (100-way) label.
pub fn load_cifar100(dir: &Path) -> Result<Dataset> {
    load_cifar100_with(dir, VALIDATION_LEN)
}

pub fn load_cifar100_with(dir: &Path, val_len: usize) -> Result<Dataset> {
    let dir = resolve(dir, "cifar-100-binary", CIFAR100_TRAIN_FILE);
    let train = read_records(&dir.join(CIFAR100_TRAIN_FILE), CIFAR100_RECORD, 1, 100)?;
    let test = read_records(&dir.join(CIFAR100_TEST_FILE), CIFAR100_RECORD, 1, 100)?;
    assemble("cifar100", train, test, 100, val_len)
}

/// Seeded synthetic images: each class has a blocky colour prototype and
/// every image is its prototype plus Gaussian noise, quantised to bytes.
/// Labels are assigned round-robin; the first 80% of images form the train
/// split, the next 10% validation and the rest test.
pub fn make_synthetic(n: usize, k: usize, seed: u64) -> Result<Dataset> {
    if n < 3 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs n >= 3 and k >= 1, got n={n}, k={k}"
        )));
    }
    const BLOCK: usize = 8;
    let blocks = IMAGE_SIDE / BLOCK;
    let mut rng = stream(seed, Stream::Data);
    let proto_dist = Normal::new(0.5, 0.25).expect("valid");
    let noise = Normal::new(0.0, 0.15).expect("valid");
    let prototypes: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..blocks * blocks * IMAGE_CHANNELS)
                .map(|_| proto_dist.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        labels.push(class);
        let proto = &prototypes[class];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                for c in 0..IMAGE_CHANNELS {
                    let base = proto[((y / BLOCK) * blocks + x / BLOCK) * IMAGE_CHANNELS + c];
                    let v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    pixels.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    let n_train = (n * 8 / 10).max(1);
    let n_val = ((n - n_train) / 2).max(1);
    let n_train = n_train.min(n - n_val - 1);
    Dataset::new(
        format!("synthetic{k}"),
        pixels,
        labels,
        k,
        (0..n_train).collect(),
        (n_train..n_train + n_val).collect(),
        (n_train + n_val..n).collect(),
    )
}

/// Seeded stratified sample of `train_n` training images; validation and test
/// are untouched. Classes get `train_n / k` images each, with the remainder
/// spread over the lowest class ids.
pub fn subset(dataset: &Dataset, train_n: usize, seed: u64) -> Result<Dataset> {
    let available = dataset.train.len();
    if train_n == 0 || train_n > available {
        return Err(Error::InvalidArgument(format!(
            "subset size {train_n} outside 1..={available}"
        )));
    }
    if train_n == available {
        return Ok(dataset.clone());
    }
    let k = dataset.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &dataset.train {
        by_class[dataset.labels[i]].push(i);
    }
    let mut rng = stream(seed, Stream::Data);
    let mut quota: Vec<usize> = (0..k)
        .map(|c| train_n / k + usize::from(c < train_n % k))
        .collect();
    // Classes short of their quota hand the difference to the others.
    let mut spare = 0;
    for (q, members) in quota.iter_mut().zip(&by_class) {
        if *q > members.len() {
            spare += *q - members.len();
            *q = members.len();
        }
    }
    while spare > 0 {
        let before = spare;
        for (q, members) in quota.iter_mut().zip(&by_class) {
            if spare > 0 && *q < members.len() {
                *q += 1;
                spare -= 1;
            }
        }
        if spare == before {
            break;
        }
    }
    let mut train = Vec::with_capacity(train_n);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..q]);
    }
    train.sort_unstable();
    let mut out = dataset.clone();
    out.train = train;
    Ok(out)
}

/// Shuffles split indices; used by the trainer with its shuffle stream.
pub(crate) fn shuffled(indices: &[usize], rng: &mut crate::rng::Rng) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(rng);
    v
}

/// Reads the dataset named by `name` (`cifar10`, `cifar100`, or
/// `synthetic`) from `dir`, falling back to `$PILU_DATA_DIR`.
pub fn load_named(name: &str, dir: Option<&Path>, seed: u64) -> Result<Dataset> {
    let dir = || -> Result<PathBuf> {
        dir.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no data directory given (pass --data-dir or set {DATA_DIR_ENV})"
                ))
            })
    };
    match name {
        "cifar10" => load_cifar10(&dir()?),
        "cifar100" => load_cifar100(&dir()?),
        "synthetic" => make_synthetic(2_000, 10, seed),
        other => Err(Error::InvalidArgument(format!(
            "unknown dataset `{other}` (expected cifar10, cifar100 or synthetic)"
        ))),
    }
}
