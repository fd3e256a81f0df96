//! Dataset loading, deterministic splitting, and batch production.
//!
//! The on-disk layout is one subdirectory per class under a root directory;
//! class indices follow the lexicographic order of the subdirectory names.

mod augment;
mod image_io;
mod resize;

pub use augment::{apply_affine, augment, AffineSample, AugmentConfig};
pub use image_io::{is_supported_image, load_image, load_ppm, save_ppm};
pub use resize::{normalize, resize_area};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const DEFAULT_IMAGE_SIZE: usize = 128;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Clone, Debug)]
pub struct Sample {
    /// `[3, H, W]` with every value in [0, 1].
    pub image: Tensor<f32>,
    pub label: usize,
    /// Path relative to the dataset root (or a synthetic identifier).
    pub source: PathBuf,
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Loads every image under `root/<class>/...`, resized to
    /// `size x size` and normalized into [0, 1].
    pub fn from_dir(root: &Path, size: usize) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!(
                "dataset root {} not found",
                root.display()
            )));
        }
        let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        class_dirs.sort();
        if class_dirs.is_empty() {
            return Err(Error::Data(format!(
                "no class subdirectories under {}",
                root.display()
            )));
        }
        let class_names: Vec<String> = class_dirs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();

        let mut samples = Vec::new();
        for (label, dir) in class_dirs.iter().enumerate() {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && is_supported_image(p))
                .collect();
            files.sort();
            for file in files {
                let raw = load_image(&file)?;
                let resized = resize_area(&raw, size, size)?;
                samples.push(Sample {
                    image: normalize(&resized),
                    label,
                    source: file.strip_prefix(root).unwrap_or(&file).to_path_buf(),
                });
            }
        }
        if samples.is_empty() {
            return Err(Error::Data("dataset contains no images".into()));
        }
        Ok(Self {
            class_names,
            samples,
        })
    }
}

/// Disjoint, exhaustive train/val/test partition: 10% of all samples go to
/// test, then 20% of the remainder to validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

fn partition(indices: &mut Vec<usize>, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    indices.shuffle(rng);
    let n = indices.len();
    let n_test = (0.10 * n as f64).round() as usize;
    let n_val = (0.20 * (n - n_test) as f64).round() as usize;
    let test = indices[..n_test].to_vec();
    let val = indices[n_test..n_test + n_val].to_vec();
    let train = indices[n_test + n_val..].to_vec();
    (train, val, test)
}

pub fn split(dataset: &LabeledDataset, seed: u64, stratified: bool) -> Result<SplitIndices> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val, test) = if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in dataset.samples.iter().enumerate() {
            by_class.entry(s.label).or_default().push(i);
        }
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (label, mut idxs) in by_class {
            if idxs.len() < 3 {
                return Err(Error::Data(format!(
                    "class {} has {} samples; stratified split needs >= 3",
                    dataset.class_names[label],
                    idxs.len()
                )));
            }
            let (tr, va, te) = partition(&mut idxs, &mut rng);
            train.extend(tr);
            val.extend(va);
            test.extend(te);
        }
        (train, val, test)
    } else {
        let mut idxs: Vec<usize> = (0..n).collect();
        partition(&mut idxs, &mut rng)
    };
    Ok(SplitIndices {
        train,
        val,
        test,
        seed,
    })
}

impl SplitIndices {
    /// Serializes as `<relative-path>\t<train|val|test>` lines in dataset
    /// sample order.
    pub fn to_manifest(&self, dataset: &LabeledDataset) -> String {
        let mut assignment = vec![""; dataset.len()];
        for &i in &self.train {
            assignment[i] = "train";
        }
        for &i in &self.val {
            assignment[i] = "val";
        }
        for &i in &self.test {
            assignment[i] = "test";
        }
        let mut out = String::new();
        for (s, a) in dataset.samples.iter().zip(assignment) {
            out.push_str(&format!("{}\t{a}\n", s.source.display()));
        }
        out
    }

    pub fn from_manifest(text: &str, dataset: &LabeledDataset) -> Result<Self> {
        let mut by_path: BTreeMap<&str, &str> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (path, part) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Data(format!("manifest line {} malformed", lineno + 1)))?;
            by_path.insert(path, part);
        }
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, s) in dataset.samples.iter().enumerate() {
            let key = s.source.display().to_string();
            match by_path.get(key.as_str()) {
                Some(&"train") => train.push(i),
                Some(&"val") => val.push(i),
                Some(&"test") => test.push(i),
                Some(other) => {
                    return Err(Error::Data(format!("unknown split label {other:?}")))
                }
                None => {
                    return Err(Error::Data(format!(
                        "sample {} missing from manifest",
                        s.source.display()
                    )))
                }
            }
        }
        Ok(Self {
            train,
            val,
            test,
            seed: 0,
        })
    }
}

/// One training batch: images plus one-hot labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    /// `[B, K]` one-hot.
    pub labels: Tensor<f32>,
    pub indices: Vec<usize>,
}

/// Produces epoch batch sequences over a fixed index subset.
///
/// Shuffling and augmentation draws are keyed on (seed, epoch), so a given
/// epoch's batches are identical across runs and replays.
pub struct Batcher<'a> {
    dataset: &'a LabeledDataset,
    indices: Vec<usize>,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    augment: Option<(AugmentConfig, u64)>,
}

impl<'a> Batcher<'a> {
    pub fn new(
        dataset: &'a LabeledDataset,
        indices: &[usize],
        batch_size: usize,
        shuffle_seed: Option<u64>,
        augment: Option<(AugmentConfig, u64)>,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data("empty index list".into()));
        }
        if batch_size == 0 {
            return Err(Error::Data("batch size must be >= 1".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::Data(format!("index {bad} out of range")));
        }
        if let Some((cfg, _)) = &augment {
            cfg.validate()?;
        }
        Ok(Self {
            dataset,
            indices: indices.to_vec(),
            batch_size,
            shuffle_seed,
            augment,
        })
    }

    pub fn epoch(&self, epoch: usize) -> Result<Vec<Batch>> {
        let mut order = self.indices.clone();
        if let Some(seed) = self.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
            order.shuffle(&mut rng);
        }
        let k = self.dataset.num_classes();
        let mut aug_rng = self
            .augment
            .as_ref()
            .map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64)));

        let mut batches = Vec::new();
        for chunk in order.chunks(self.batch_size) {
            let b = chunk.len();
            let shape = self.dataset.samples[chunk[0]].image.shape().to_vec();
            let mut images = Vec::with_capacity(b * shape.iter().product::<usize>());
            let mut labels = vec![0.0f32; b * k];
            for (bi, &i) in chunk.iter().enumerate() {
                let s = &self.dataset.samples[i];
                let img = match (&self.augment, &mut aug_rng) {
                    (Some((cfg, _)), Some(rng)) => augment(&s.image, s.label, cfg, rng)?.0,
                    _ => s.image.clone(),
                };
                images.extend_from_slice(img.data());
                labels[bi * k + s.label] = 1.0;
            }
            batches.push(Batch {
                images: Tensor::from_vec(&[b, shape[0], shape[1], shape[2]], images)?,
                labels: Tensor::from_vec(&[b, k], labels)?,
                indices: chunk.to_vec(),
            });
        }
        Ok(batches)
    }
}
