use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MapShape;

/// Environment variable consulted when a file-backed dataset has no explicit root.
pub const DATA_ROOT_ENV: &str = "MACC_DATA_ROOT";

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian class clusters, clipped to `[0, 1]`.
    BlobsSynthetic {
        #[serde(default = "default_classes")]
        n_classes: usize,
        #[serde(default = "default_blob_count")]
        n: usize,
        /// `[channels, height, width]` of each example.
        #[serde(default = "default_blob_shape")]
        shape: [usize; 3],
        /// Per-coordinate noise standard deviation.
        #[serde(default = "default_spread")]
        spread: f64,
        /// Ratio of the largest to the smallest class size.
        #[serde(default = "default_imbalance")]
        imbalance: f64,
        #[serde(default)]
        seed: u64,
    },
    /// CIFAR-10 binary batches (`*.bin`, 3073-byte records) under `root`.
    Cifar10BinarySubset {
        #[serde(default)]
        root: Option<PathBuf>,
        /// Keep at most this many records, in file order.
        #[serde(default)]
        limit: Option<usize>,
    },
    /// `root/<class name>/<image>.png`; classes are numbered in name order.
    FolderPerClass {
        #[serde(default)]
        root: Option<PathBuf>,
    },
}

fn default_classes() -> usize {
    3
}
fn default_blob_count() -> usize {
    3000
}
fn default_blob_shape() -> [usize; 3] {
    [1, 1, 8]
}
fn default_spread() -> f64 {
    0.15
}
fn default_imbalance() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn blobs(n_classes: usize, n: usize, seed: u64) -> Self {
        DatasetSpec::BlobsSynthetic {
            n_classes,
            n,
            shape: default_blob_shape(),
            spread: default_spread(),
            imbalance: default_imbalance(),
            seed,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            DatasetSpec::BlobsSynthetic { .. } => "blobs-synthetic",
            DatasetSpec::Cifar10BinarySubset { .. } => "cifar10-binary-subset",
            DatasetSpec::FolderPerClass { .. } => "folder-per-class",
        }
    }
}

fn resolve_root(explicit: &Option<PathBuf>, fallback: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    if let Some(p) = fallback {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::config(format!("no dataset root given and {DATA_ROOT_ENV} is unset")))
}

/// Loads the full source dataset. `root` is used when the spec names none;
/// otherwise the environment variable is consulted.
pub fn load_dataset(spec: &DatasetSpec, root: Option<&Path>) -> Result<Dataset> {
    match spec {
        DatasetSpec::BlobsSynthetic {
            n_classes,
            n,
            shape,
            spread,
            imbalance,
            seed,
        } => blobs(*n_classes, *n, MapShape::new(shape[0], shape[1], shape[2]), *spread, *imbalance, *seed),
        DatasetSpec::Cifar10BinarySubset { root: r, limit } => load_cifar(&resolve_root(r, root)?, *limit),
        DatasetSpec::FolderPerClass { root: r } => load_folder(&resolve_root(r, root)?),
    }
}

fn blobs(n_classes: usize, n: usize, shape: MapShape, spread: f64, imbalance: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::config("blobs need at least two classes"));
    }
    if n < n_classes {
        return Err(Error::config("blobs need at least one example per class"));
    }
    if shape.is_empty() {
        return Err(Error::config("blob shape must be non-empty"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config("blob spread must be positive"));
    }
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::config("imbalance must be >= 1"));
    }
    let dim = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.3..0.7)).collect())
        .collect();

    // Class k gets weight imbalance^(-k / (K - 1)); rounding error goes to class 0.
    let weights: Vec<f64> = (0..n_classes)
        .map(|k| imbalance.powf(-(k as f64) / (n_classes - 1) as f64))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((n as f64 * w / wsum).round() as usize).max(1))
        .collect();
    let assigned: usize = counts.iter().sum();
    counts[0] = (counts[0] + n).checked_sub(assigned).filter(|&c| c > 0).ok_or_else(|| {
        Error::config("blob class sizes do not fit the requested count")
    })?;

    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut inputs = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for (d, c) in centers[k].iter().enumerate() {
                inputs[[row, d]] = (c + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            labels.push(k);
            row += 1;
        }
    }
    Dataset::new(inputs, labels, shape, n_classes)
}

/// Parses CIFAR-10 binary records: one label byte then 3072 channel-major pixel bytes.
pub fn parse_cifar_bytes(bytes: &[u8], path: &Path, limit: Option<usize>) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        if limit.is_some_and(|l| labels.len() >= l) {
            break;
        }
        if bytes.len() - offset < CIFAR_RECORD {
            return Err(Error::format(
                path,
                format!(
                    "truncated record at byte offset {offset}: {} of {CIFAR_RECORD} bytes present",
                    bytes.len() - offset
                ),
            ));
        }
        let label = bytes[offset] as usize;
        if label >= 10 {
            return Err(Error::format(path, format!("label {label} at byte offset {offset} outside 0..10")));
        }
        labels.push(label);
        pixels.extend(bytes[offset + 1..offset + CIFAR_RECORD].iter().map(|&b| b as f64 / 255.0));
        offset += CIFAR_RECORD;
    }
    Ok((pixels, labels))
}

fn load_cifar(root: &Path, limit: Option<usize>) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .bin batch files"),
        ));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let remaining = limit.map(|l| l.saturating_sub(labels.len()));
        if remaining == Some(0) {
            break;
        }
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let (p, l) = parse_cifar_bytes(&bytes, &file, remaining)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let shape = MapShape::new(3, CIFAR_SIDE, CIFAR_SIDE);
    let inputs = Array2::from_shape_vec((labels.len(), shape.len()), pixels)
        .map_err(|e| Error::format(root, e.to_string()))?;
    Dataset::new(inputs, labels, shape, 10)
}

fn load_folder(root: &Path) -> Result<Dataset> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no class directories"),
        ));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(u32, u32)> = None;
    for (label, dir) in classes.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file)
                .map_err(|e| Error::format(&file, e.to_string()))?
                .to_rgb8();
            let d = img.dimensions();
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::format(
                        &file,
                        format!("image is {}x{}, earlier images are {}x{}", d.0, d.1, expected.0, expected.1),
                    ))
                }
                _ => {}
            }
            // Channel-major.
            let (w, h) = (d.0 as usize, d.1 as usize);
            let raw = img.as_raw();
            for c in 0..3 {
                for i in 0..w * h {
                    pixels.push(raw[i * 3 + c] as f64 / 255.0);
                }
            }
            labels.push(label);
        }
    }
    let (w, h) = dims.ok_or_else(|| {
        Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "class directories contain no images"),
        )
    })?;
    let shape = MapShape::new(3, h as usize, w as usize);
    let inputs = Array2::from_shape_vec((labels.len(), shape.len()), pixels)
        .map_err(|e| Error::format(root, e.to_string()))?;
    Dataset::new(inputs, labels, shape, classes.len())
}
