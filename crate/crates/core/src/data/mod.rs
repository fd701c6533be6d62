//! Datasets: IDX image files, synthetic Gaussian blobs, seeded splits and the
//! simulated annotation oracle.

mod idx;

use std::collections::BTreeSet;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tensor::{Tensor, TensorError};

pub use idx::{load_idx, read_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("byte {offset}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { offset: usize, found: u32, expected: u32 },
    #[error("byte {offset}: file truncated, needed {needed} bytes but only {available} present")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("byte {offset}: image count {images} disagrees with label count {labels}")]
    CountMismatch {
        offset: usize,
        images: usize,
        labels: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("index {0} was already labeled")]
    AlreadyLabeled(usize),
    #[error("index {index} outside dataset of {len}")]
    OutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Inputs of shape `(n, …)` with one class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self, DataError> {
        if inputs.shape().len() < 2 {
            return Err(DataError::Invalid("inputs need a leading sample dimension".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::Invalid(format!("label {l} at row {i} outside [0, {num_classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// Reinterprets each sample with a new shape of the same size, e.g.
    /// 16 blob features as a `1×4×4` map.
    pub fn with_sample_shape(mut self, shape: &[usize]) -> Result<Self, DataError> {
        if shape.iter().product::<usize>() != self.inputs.row_len() {
            return Err(DataError::Invalid(format!(
                "cannot view samples of {:?} as {shape:?}",
                self.sample_shape()
            )));
        }
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        self.inputs = self.inputs.reshape(full)?;
        Ok(self)
    }
}

/// Isotropic Gaussian blobs. Class `c` is centred at `+2·e_c` for `c < dim`
/// and `−2·e_{c−dim}` beyond; sample `i` has label `i mod classes`.
pub fn gen_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset, DataError> {
    if classes == 0 || n < classes {
        return Err(DataError::Invalid(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    if dim == 0 || classes > 2 * dim {
        return Err(DataError::Invalid(format!("{classes} classes do not fit on the axes of dim {dim}")));
    }
    if spread.is_nan() || spread < 0.0 {
        return Err(DataError::Invalid(format!("spread must be non-negative, got {spread}")));
    }
    let mut rng = seed::rng(seed);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let (axis, sign) = if c < dim { (c, 2.0) } else { (c - dim, -2.0) };
        for d in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if d == axis { sign } else { 0.0 };
            data.push(mean + spread * noise);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, format!("blobs-{n}x{dim}-c{classes}"))
}

/// Class means used by [`gen_blobs`].
pub fn blob_mean(class: usize, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    if class < dim {
        m[class] = 2.0;
    } else {
        m[class - dim] = -2.0;
    }
    m
}

/// `⌊frac·n⌋`, tolerant of the representation error in decimal fractions.
pub(crate) fn floor_fraction(frac: f64, n: usize) -> usize {
    (frac * n as f64 + 1e-9).floor() as usize
}

/// Seeded shuffle, then cut at `⌊train_frac·n⌋`. Returns the parts and the
/// original indices each part was drawn from.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::Invalid(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let cut = floor_fraction(train_frac, n);
    if cut == 0 || cut == n {
        return Err(DataError::Invalid(format!(
            "fraction {train_frac} of {n} samples leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    seed::shuffle(&mut order, &mut seed::rng(seed));
    let test = order.split_off(cut);
    Ok((order, test))
}

pub fn split(dataset: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let (tr, te) = split_indices(dataset.len(), train_frac, seed)?;
    Ok((dataset.subset(&tr), dataset.subset(&te)))
}

/// Holds the hidden labels of a pool and counts every query.
#[derive(Debug, Clone)]
pub struct LabelOracle {
    hidden: Vec<usize>,
    queried: BTreeSet<usize>,
}

impl LabelOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        Self {
            hidden: labels,
            queried: BTreeSet::new(),
        }
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        Self::new(d.labels.clone())
    }

    /// Number of labels revealed so far.
    pub fn queries(&self) -> usize {
        self.queried.len()
    }

    /// Reveals labels of never-queried indices. Fails without side effects if
    /// any index is out of range, repeated, or already labeled.
    pub fn query(&mut self, indices: &[usize]) -> Result<Vec<usize>, DataError> {
        let mut batch = BTreeSet::new();
        for &i in indices {
            if i >= self.hidden.len() {
                return Err(DataError::OutOfRange {
                    index: i,
                    len: self.hidden.len(),
                });
            }
            if self.queried.contains(&i) || !batch.insert(i) {
                return Err(DataError::AlreadyLabeled(i));
            }
        }
        self.queried.extend(batch);
        Ok(indices.iter().map(|&i| self.hidden[i]).collect())
    }
}
