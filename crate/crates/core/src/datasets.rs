//! Dataset resolution: synthetic Gaussian blobs plus loaders for the MNIST
//! (IDX) and CIFAR (binary) file formats.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bagset::{select_binary_subset, LabeledDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Environment variable naming the directory that holds downloaded datasets.
pub const DATA_DIR_ENV: &str = "LLP_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair<T> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

/// Isotropic Gaussian blobs on a circle. With the default radius the classes
/// are separated by about eight standard deviations, so the Bayes error is
/// well below 0.1%.
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub classes: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for Blobs {
    fn default() -> Self {
        Self { classes: 4, radius: 4.0 * 2f64.sqrt(), std: 1.0 }
    }
}

/// Generated blob data and the single scale factor that maps it into [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct BlobData<T> {
    pub data: DatasetPair<T>,
    pub blobs: Blobs,
    pub scale: f64,
}

impl Blobs {
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.classes)
            .map(|c| {
                let a = PI / 4.0 + 2.0 * PI * c as f64 / self.classes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<usize>) {
        let centers = self.centers();
        let noise = Normal::new(0.0, self.std).expect("positive std");
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        labels.shuffle(rng);
        let points = labels
            .iter()
            .map(|&c| [centers[c][0] + noise.sample(rng), centers[c][1] + noise.sample(rng)])
            .collect();
        (points, labels)
    }

    /// Draws `n_train` + `n_test` points with balanced classes. Both splits
    /// are divided by the largest absolute training coordinate, which keeps
    /// the geometry isotropic and the training set inside [-1, 1].
    pub fn generate<T: Scalar>(&self, n_train: usize, n_test: usize, seed: u64) -> Result<BlobData<T>> {
        if self.classes < 2 {
            return Err(Error::config("blobs need at least two classes"));
        }
        if n_train == 0 || n_test == 0 {
            return Err(Error::config("blob splits must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, train_labels) = self.sample(n_train, &mut rng);
        let (test, test_labels) = self.sample(n_test, &mut rng);
        let max_abs = train.iter().flat_map(|p| p.iter()).fold(0f64, |m, v| m.max(v.abs()));
        let scale = 1.0 / max_abs;
        let to_array = |pts: &[[f64; 2]]| {
            Array2::from_shape_fn((pts.len(), 2), |(i, j)| T::lit(pts[i][j] * scale))
        };
        let name = if self.classes == 4 { format!("blobs-{n_train}") } else { format!("blobs{}-{n_train}", self.classes) };
        let data = DatasetPair {
            train: LabeledDataset::new(name.clone(), to_array(&train), vec![2], train_labels, self.classes)?,
            test: LabeledDataset::new(format!("{name}/test"), to_array(&test), vec![2], test_labels, self.classes)?,
        };
        Ok(BlobData { data, blobs: self.clone(), scale })
    }
}

impl<T: Scalar> BlobData<T> {
    /// Bayes-optimal predictions: with equal priors and a shared isotropic
    /// covariance the posterior argmax is the nearest center.
    pub fn bayes_predict(&self, features: ArrayView2<T>) -> Vec<usize> {
        let centers: Vec<[f64; 2]> =
            self.blobs.centers().iter().map(|c| [c[0] * self.scale, c[1] * self.scale]).collect();
        features
            .rows()
            .into_iter()
            .map(|r| {
                let (x, y) = (r[0].as_f64(), r[1].as_f64());
                let mut best = (f64::INFINITY, 0);
                for (k, c) in centers.iter().enumerate() {
                    let d = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1
            })
            .collect()
    }
}

/// Default data directory: `$LLP_DATA_DIR`, else `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves a dataset name to train/test splits.
///
/// Names: `blobs`, `blobs-<N>`, `blobs<K>-<N>`, `mnist`, `mnist-<N>`,
/// `cifar10`, `cifar100`, each optionally followed by `/binary-<a>-<b>`.
/// Blob test sets hold a quarter as many points as the training set.
pub fn resolve<T: Scalar>(name: &str, data_dir: Option<&Path>, seed: u64) -> Result<DatasetPair<T>> {
    let (base, binary) = match name.split_once("/binary-") {
        Some((base, pair)) => {
            let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
            let mut it = pair.split('-');
            match (parse(it.next()), parse(it.next()), it.next()) {
                (Some(a), Some(b), None) => (base, Some((a, b))),
                _ => return Err(resolution(name, "binary suffix must look like /binary-<a>-<b>")),
            }
        }
        None => (name, None),
    };
    let dir = data_dir.map(Path::to_path_buf).unwrap_or_else(default_data_dir);
    let pair = resolve_base::<T>(base, &dir, seed)?;
    match binary {
        None => Ok(pair),
        Some((a, b)) => Ok(DatasetPair {
            train: select_binary_subset(&pair.train, a, b)?,
            test: select_binary_subset(&pair.test, a, b)?,
        }),
    }
}

fn resolution(name: &str, reason: impl Into<String>) -> Error {
    Error::Resolution { name: name.to_string(), reason: reason.into() }
}

fn split_size(base: &str, prefix: &str) -> Option<Option<usize>> {
    let rest = base.strip_prefix(prefix)?;
    if rest.is_empty() {
        return Some(None);
    }
    rest.strip_prefix('-').and_then(|n| n.parse().ok()).map(Some)
}

fn resolve_base<T: Scalar>(base: &str, dir: &Path, seed: u64) -> Result<DatasetPair<T>> {
    if let Some(n) = split_size(base, "blobs") {
        let n = n.unwrap_or(4000);
        return Ok(Blobs::default().generate(n, (n / 4).max(1), seed)?.data);
    }
    if let Some(rest) = base.strip_prefix("blobs") {
        if let Some((k, n)) = rest.split_once('-') {
            if let (Ok(k), Ok(n)) = (k.parse::<usize>(), n.parse::<usize>()) {
                let blobs = Blobs { classes: k, ..Blobs::default() };
                return Ok(blobs.generate(n, (n / 4).max(1), seed)?.data);
            }
        }
    }
    if let Some(n) = split_size(base, "mnist") {
        let pair = load_mnist::<T>(dir)?;
        return match n {
            None => Ok(pair),
            Some(n) => subsample(pair, n, seed, base),
        };
    }
    match base {
        "cifar10" => load_cifar::<T>(dir, false),
        "cifar100" => load_cifar::<T>(dir, true),
        _ => Err(resolution(base, "unknown dataset")),
    }
}

/// Random `n`-instance subset of the training split; the test split is kept.
fn subsample<T: Scalar>(pair: DatasetPair<T>, n: usize, seed: u64, name: &str) -> Result<DatasetPair<T>> {
    if n == 0 || n > pair.train.len() {
        return Err(resolution(name, format!("subset size must be in 1..={}", pair.train.len())));
    }
    let mut idx: Vec<usize> = (0..pair.train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(DatasetPair { train: pair.train.subset(&idx, name)?, test: pair.test })
}

fn read(path: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| resolution(name, format!("{}: {e}", path.display())))
}

fn pixel<T: Scalar>(b: u8) -> T {
    T::lit(b as f64 / 127.5 - 1.0)
}

fn be_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
}

/// Parses an IDX image file (magic 0x00000803).
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<(Array2<T>, usize, usize)> {
    if bytes.len() < 16 || be_u32(bytes, 0) != 0x803 {
        return Err(Error::config("not an IDX image file"));
    }
    let (n, h, w) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12));
    if bytes.len() != 16 + n * h * w {
        return Err(Error::config("truncated IDX image file"));
    }
    let data = &bytes[16..];
    Ok((Array2::from_shape_fn((n, h * w), |(i, j)| pixel(data[i * h * w + j])), h, w))
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    if bytes.len() < 8 || be_u32(bytes, 0) != 0x801 {
        return Err(Error::config("not an IDX label file"));
    }
    let n = be_u32(bytes, 4);
    if bytes.len() != 8 + n {
        return Err(Error::config("truncated IDX label file"));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads uncompressed MNIST IDX files from `<dir>/mnist/`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<DatasetPair<T>> {
    let root = dir.join("mnist");
    let split = |images: &str, labels: &str, name: &str| -> Result<LabeledDataset<T>> {
        let (x, h, w) = parse_idx_images::<T>(&read(&root.join(images), "mnist")?)
            .map_err(|e| resolution("mnist", e.to_string()))?;
        let y = parse_idx_labels(&read(&root.join(labels), "mnist")?).map_err(|e| resolution("mnist", e.to_string()))?;
        LabeledDataset::new(name, x, vec![1, h, w], y, 10)
    };
    Ok(DatasetPair {
        train: split("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "mnist")?,
        test: split("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "mnist/test")?,
    })
}

/// Parses CIFAR binary records: label byte(s) followed by 3072 CHW pixels.
pub fn parse_cifar_records<T: Scalar>(bytes: &[u8], fine: bool) -> Result<(Array2<T>, Vec<usize>)> {
    let skip = if fine { 2 } else { 1 };
    let rec = skip + 3072;
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::config("CIFAR file length is not a multiple of the record size"));
    }
    let n = bytes.len() / rec;
    let labels = (0..n).map(|i| bytes[i * rec + skip - 1] as usize).collect();
    let x = Array2::from_shape_fn((n, 3072), |(i, j)| pixel(bytes[i * rec + skip + j]));
    Ok((x, labels))
}

/// Loads `<dir>/cifar-10-batches-bin/` or `<dir>/cifar-100-binary/`.
pub fn load_cifar<T: Scalar>(dir: &Path, hundred: bool) -> Result<DatasetPair<T>> {
    let (name, root, train_files, test_file, k): (&str, PathBuf, Vec<String>, &str, usize) = if hundred {
        ("cifar100", dir.join("cifar-100-binary"), vec!["train.bin".into()], "test.bin", 100)
    } else {
        (
            "cifar10",
            dir.join("cifar-10-batches-bin"),
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            "test_batch.bin",
            10,
        )
    };
    let load = |files: &[String]| -> Result<(Array2<T>, Vec<usize>)> {
        let mut bytes = Vec::new();
        for f in files {
            bytes.extend(read(&root.join(f), name)?);
        }
        parse_cifar_records(&bytes, hundred).map_err(|e| resolution(name, e.to_string()))
    };
    let (x, y) = load(&train_files)?;
    let (tx, ty) = load(&[test_file.to_string()])?;
    Ok(DatasetPair {
        train: LabeledDataset::new(name, x, vec![3, 32, 32], y, k)?,
        test: LabeledDataset::new(format!("{name}/test"), tx, vec![3, 32, 32], ty, k)?,
    })
}
