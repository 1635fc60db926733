//! Turning a labeled dataset into disjoint bags that carry only label
//! proportions, and the JSON-lines manifest those bags are stored in.
//!
//! Instance labels never travel with a [`BagDataset`]. Code that needs them
//! for evaluation goes through [`LabelSidecar`], which the training loop does
//! not accept.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Simplex tolerance for proportion vectors.
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Tolerance for "proportion is a multiple of 1/N_i".
pub const LATTICE_TOL: f64 = 1e-9;

/// A fully labeled dataset. Features are stored one instance per row,
/// flattened from `instance_shape` (e.g. `[1, 28, 28]` or `[2]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub features: Array2<T>,
    pub instance_shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub name: String,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        name: impl Into<String>,
        features: Array2<T>,
        instance_shape: Vec<usize>,
        labels: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::config(format!("class count must be at least 2, got {k}")));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let flat: usize = instance_shape.iter().product();
        if flat != features.ncols() {
            return Err(Error::shape(format!(
                "instance shape {:?} has {} elements but rows have {}",
                instance_shape,
                flat,
                features.ncols()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelDomain { label, k });
        }
        Ok(Self { features, instance_shape, labels, k, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature-only view handed to training code.
    pub fn unlabeled(&self) -> UnlabeledView<'_, T> {
        UnlabeledView { features: self.features.view(), instance_shape: &self.instance_shape }
    }

    /// The hidden labels, kept apart from the bags.
    pub fn label_sidecar(&self) -> LabelSidecar {
        LabelSidecar { source: self.name.clone(), k: self.k, labels: self.labels.clone() }
    }

    /// Rows `indices` of this dataset, in order, as a new dataset.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::config(format!("index {i} out of range for {} instances", self.len())));
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(name, features, self.instance_shape.clone(), labels, self.k)
    }
}

/// Instance features without labels.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledView<'a, T> {
    pub features: ArrayView2<'a, T>,
    pub instance_shape: &'a [usize],
}

impl<T> UnlabeledView<'_, T> {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Ground-truth instance labels of a bagged dataset, for evaluation only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub source: String,
    pub k: usize,
    pub labels: Vec<usize>,
}

/// A length-K probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProportionVector<T>(Vec<T>);

impl<T: Scalar> ProportionVector<T> {
    /// Validates non-negativity and unit sum (within [`SIMPLEX_TOL`]).
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("empty proportion vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < T::zero()) {
            return Err(Error::Validation(format!("proportion entry {v} is negative or non-finite")));
        }
        let sum: T = values.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Validation(format!("proportions sum to {sum}, expected 1")));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![T::one() / T::from_usize_lossy(k); k])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn cast<U: Scalar>(&self) -> ProportionVector<U> {
        ProportionVector(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }

    /// Shannon entropy with natural log; zero entries contribute nothing.
    pub fn entropy(&self) -> T {
        -self.0.iter().filter(|p| **p > T::zero()).map(|&p| p * p.ln()).sum::<T>()
    }
}

/// Empirical class frequencies of `labels`.
pub fn compute_proportions<T: Scalar>(labels: &[usize], k: usize) -> Result<ProportionVector<T>> {
    if labels.is_empty() {
        return Err(Error::InvalidBag("cannot compute proportions of an empty bag".into()));
    }
    let mut counts = vec![0usize; k];
    for &label in labels {
        if label >= k {
            return Err(Error::LabelDomain { label, k });
        }
        counts[label] += 1;
    }
    let n = T::from_usize_lossy(labels.len());
    Ok(ProportionVector(counts.into_iter().map(|c| T::from_usize_lossy(c) / n).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: usize,
    #[serde(rename = "indices")]
    pub instance_indices: Vec<usize>,
    pub proportions: ProportionVector<f64>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instance_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_indices.is_empty()
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.instance_indices.is_empty() {
            return Err(Error::InvalidBag(format!("bag {} has no instances", self.id)));
        }
        let unique: HashSet<_> = self.instance_indices.iter().collect();
        if unique.len() != self.instance_indices.len() {
            return Err(Error::InvalidBag(format!("bag {} repeats an instance", self.id)));
        }
        let p = ProportionVector::<f64>::new(self.proportions.values().to_vec())
            .map_err(|e| Error::Validation(format!("bag {}: {e}", self.id)))?;
        if p.k() != k {
            return Err(Error::Validation(format!("bag {} has {} proportions, expected {k}", self.id, p.k())));
        }
        let n = self.len() as f64;
        for &v in p.values() {
            let scaled = v * n;
            if (scaled - scaled.round()).abs() > LATTICE_TOL * n {
                return Err(Error::Validation(format!(
                    "bag {}: proportion {v} is not a multiple of 1/{}",
                    self.id,
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

/// Bags with proportion supervision over a named source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    pub bags: Vec<Bag>,
    pub k: usize,
    pub source: String,
    pub bag_size: usize,
    pub seed: u64,
}

impl BagDataset {
    /// Checks every bag and pairwise disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for bag in &self.bags {
            bag.validate(self.k)?;
            for &i in &bag.instance_indices {
                if !seen.insert(i) {
                    return Err(Error::InvalidBag(format!("instance {i} appears in more than one bag")));
                }
            }
        }
        Ok(())
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.bags.iter().flat_map(|b| b.instance_indices.iter().copied()).max()
    }
}

/// Shuffles instance indices with a seeded RNG, then cuts consecutive bags of
/// exactly `bag_size`. Remainder instances are dropped.
pub fn partition_into_bags<T: Scalar>(
    dataset: &LabeledDataset<T>,
    bag_size: usize,
    seed: u64,
) -> Result<BagDataset> {
    if bag_size == 0 {
        return Err(Error::config("bag size must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::config("cannot bag an empty dataset"));
    }
    if bag_size > dataset.len() {
        return Err(Error::config(format!(
            "bag size {bag_size} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let bags = order
        .chunks_exact(bag_size)
        .enumerate()
        .map(|(id, chunk)| {
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            Ok(Bag {
                id,
                instance_indices: chunk.to_vec(),
                proportions: compute_proportions(&labels, dataset.k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BagDataset { bags, k: dataset.k, source: dataset.name.clone(), bag_size, seed })
}

/// Keeps only classes `class_a` and `class_b`, relabeled to 0 and 1.
pub fn select_binary_subset<T: Scalar>(
    dataset: &LabeledDataset<T>,
    class_a: usize,
    class_b: usize,
) -> Result<LabeledDataset<T>> {
    if class_a == class_b {
        return Err(Error::config(format!("binary subset needs two distinct classes, got {class_a} twice")));
    }
    for c in [class_a, class_b] {
        if c >= dataset.k {
            return Err(Error::LabelDomain { label: c, k: dataset.k });
        }
    }
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.labels[i] == class_a || dataset.labels[i] == class_b)
        .collect();
    let features = dataset.features.select(Axis(0), &keep);
    let labels = keep.iter().map(|&i| usize::from(dataset.labels[i] == class_b)).collect();
    LabeledDataset::new(
        binary_name(&dataset.name, class_a, class_b),
        features,
        dataset.instance_shape.clone(),
        labels,
        2,
    )
}

pub(crate) fn binary_name(base: &str, a: usize, b: usize) -> String {
    format!("{base}/binary-{a}-{b}")
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    k: usize,
    bag_size: usize,
    seed: u64,
    source: String,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: usize,
    indices: Vec<usize>,
    proportions: Vec<f64>,
}

/// Renders the JSON-lines manifest: one header object, then one line per bag.
pub fn manifest_to_string(bags: &BagDataset) -> Result<String> {
    let header = ManifestHeader {
        k: bags.k,
        bag_size: bags.bag_size,
        seed: bags.seed,
        source: bags.source.clone(),
        n: bags.bags.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for bag in &bags.bags {
        let row = ManifestRow {
            id: bag.id,
            indices: bag.instance_indices.clone(),
            proportions: bag.proportions.values().to_vec(),
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn persist_manifest(bags: &BagDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(manifest_to_string(bags)?.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<BagDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(file))
}

/// Parses a manifest. Line numbers in errors are 1-based.
pub fn parse_manifest(reader: impl BufRead) -> Result<BagDataset> {
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let (line_no, first) = lines.next().ok_or_else(|| parse_err(1, "empty manifest".into()))?;
    let first = first.map_err(|e| parse_err(line_no, e.to_string()))?;
    let header: ManifestHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(line_no, format!("header: {e}")))?;

    let mut bags = Vec::with_capacity(header.n);
    for (line_no, line) in lines {
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let proportions = ProportionVector::new(row.proportions)
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        let bag = Bag { id: row.id, instance_indices: row.indices, proportions };
        bag.validate(header.k).map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        bags.push(bag);
    }
    if bags.len() != header.n {
        return Err(Error::Validation(format!("header declares {} bags, found {}", header.n, bags.len())));
    }
    let out = BagDataset {
        bags,
        k: header.k,
        source: header.source,
        bag_size: header.bag_size,
        seed: header.seed,
    };
    out.validate()?;
    Ok(out)
}

pub fn persist_label_sidecar(sidecar: &LabelSidecar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_vec(sidecar)?).map_err(|e| Error::io(path, e))
}

pub fn load_label_sidecar(path: impl AsRef<Path>) -> Result<LabelSidecar> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
