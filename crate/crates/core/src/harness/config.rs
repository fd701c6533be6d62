//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{gen_blobs, load_idx, split_indices, Dataset};
use crate::nn::{KdConfig, NetworkSpec, TrainConfig};
use crate::prune::SparsityTarget;
use crate::select::SelectionMetric;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pruned selector, fusion, distilled fine-tuning.
    Prunefuse,
    /// Dense selector, final model retrained from init on the selected set.
    BaselineAl,
    /// Pruned selector, final dense model trained from init without fusion.
    NoFusionAblation,
    /// Dense model trained on the whole pool.
    FullDataReference,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Prunefuse => "prunefuse",
            Mode::BaselineAl => "baseline_al",
            Mode::NoFusionAblation => "no_fusion_ablation",
            Mode::FullDataReference => "full_data_reference",
        }
    }

    pub fn uses_selection(self) -> bool {
        self != Mode::FullDataReference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic Gaussian blobs; pool, validation and test sets are drawn
    /// independently from the same mixture.
    Blobs {
        n: usize,
        n_val: usize,
        n_test: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
        /// Optional per-sample view, e.g. `[1, 4, 4]` for 16 features.
        #[serde(default)]
        sample_shape: Option<Vec<usize>>,
    },
    /// IDX image/label files; validation rows are carved from the training files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default)]
        split_seed: u64,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Dense + ReLU hidden layers over flattened inputs.
    Mlp,
    /// 3×3 conv + ReLU blocks, flattened into a dense classifier.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: Arch,
    /// Hidden units (mlp) or channels (conv) per block.
    pub widths: Vec<usize>,
}

impl NetworkConfig {
    pub fn tag(&self) -> String {
        let arch = match self.arch {
            Arch::Mlp => "mlp",
            Arch::Conv => "conv",
        };
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        format!("{arch}-{}", widths.join("x"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfigs {
    #[serde(default)]
    pub selector: TrainConfig,
    #[serde(default)]
    pub fused: TrainConfig,
    #[serde(default)]
    pub baseline: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdSettings {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_true() -> bool {
    true
}

fn default_temperature() -> f64 {
    KdConfig::default().temperature
}

fn default_lambda() -> f64 {
    KdConfig::default().lambda
}

impl Default for KdSettings {
    fn default() -> Self {
        let kd = KdConfig::default();
        Self {
            enabled: true,
            temperature: kd.temperature,
            lambda: kd.lambda,
        }
    }
}

impl KdSettings {
    pub fn active(&self) -> Option<KdConfig> {
        self.enabled.then_some(KdConfig {
            temperature: self.temperature,
            lambda: self.lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default = "default_metric")]
    pub metric: SelectionMetric,
    /// Fraction of prunable channels removed from the selector.
    #[serde(default = "default_sparsity")]
    pub sparsity: SparsityTarget,
    /// Labeling budget as a fraction of the pool.
    pub budget: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Run seeds on the rayon pool. Output does not depend on this.
    #[serde(default = "default_true")]
    pub parallel: bool,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: PhaseConfigs,
    #[serde(default)]
    pub kd: KdSettings,
}

fn default_metric() -> SelectionMetric {
    SelectionMetric::LeastConfidence
}

fn default_sparsity() -> SparsityTarget {
    SparsityTarget::new(0.0).expect("zero sparsity is valid")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Pool, validation and test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub pool: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.normalized()
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Validates the config and applies mode-implied settings: the dense
    /// baseline and the full-data reference run with `sparsity = 0`.
    pub fn normalized(mut self) -> Result<Self, HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        match self.mode {
            Mode::Prunefuse | Mode::NoFusionAblation if self.sparsity.value() <= 0.0 => {
                return bad(format!("mode {} requires sparsity > 0", self.mode.tag()));
            }
            Mode::BaselineAl | Mode::FullDataReference => self.sparsity = default_sparsity(),
            _ => {}
        }
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return bad(format!("budget must lie in (0, 1], got {}", self.budget));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.network.widths.is_empty() && self.network.arch == Arch::Conv {
            return bad("conv networks need at least one block".into());
        }
        if self.network.widths.contains(&0) {
            return bad("network widths must be positive".into());
        }
        if self.kd.enabled && !(self.kd.temperature > 0.0 && self.kd.temperature.is_finite()) {
            return bad(format!("kd temperature must be positive, got {}", self.kd.temperature));
        }
        if self.kd.enabled && !(0.0..=1.0).contains(&self.kd.lambda) {
            return bad(format!("kd lambda must lie in [0, 1], got {}", self.kd.lambda));
        }
        for (phase, cfg) in [
            ("selector", &self.train.selector),
            ("fused", &self.train.fused),
            ("baseline", &self.train.baseline),
        ] {
            cfg.validate().map_err(|e| HarnessError::Config(format!("train.{phase}: {e}")))?;
        }
        if let DatasetConfig::Blobs { n, n_val, n_test, classes, dim, spread, .. } = &self.dataset {
            if *n == 0 || *n_val == 0 || *n_test == 0 || *classes < 2 || *dim == 0 || spread.is_nan() || *spread < 0.0 {
                return bad("blobs need n, n_val, n_test, dim > 0, classes >= 2 and spread >= 0".into());
            }
        }
        Ok(self)
    }

    /// Loads the dataset named by the config and splits it.
    pub fn load_splits(&self) -> Result<Splits, HarnessError> {
        match &self.dataset {
            DatasetConfig::Blobs { n, n_val, n_test, classes, dim, spread, seed: s, sample_shape } => {
                let draw = |count: usize, stream: u64| -> Result<Dataset, HarnessError> {
                    let mut d = gen_blobs(count, *classes, *dim, *spread, seed::derive(*s, stream))?;
                    if let Some(shape) = sample_shape {
                        d = d.with_sample_shape(shape)?;
                    }
                    Ok(d)
                };
                Ok(Splits {
                    pool: draw(*n, 0)?,
                    val: draw(*n_val, 1)?,
                    test: draw(*n_test, 2)?,
                })
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                val_fraction,
                split_seed,
                limit_train,
                limit_test,
            } => {
                let mut train = load_idx(train_images, train_labels)?;
                let mut test = load_idx(test_images, test_labels)?;
                let classes = train.num_classes.max(test.num_classes);
                train.num_classes = classes;
                test.num_classes = classes;
                let head = |d: Dataset, limit: &Option<usize>| match limit {
                    Some(k) if *k < d.len() => d.subset(&(0..*k).collect::<Vec<_>>()),
                    _ => d,
                };
                let (train, test) = (head(train, limit_train), head(test, limit_test));
                let (val_idx, pool_idx) = split_indices(train.len(), *val_fraction, *split_seed)?;
                Ok(Splits {
                    pool: train.subset(&pool_idx),
                    val: train.subset(&val_idx),
                    test,
                })
            }
        }
    }

    /// Dense network spec for samples of `sample_shape` with `classes` outputs.
    pub fn network_spec(&self, sample_shape: &[usize], classes: usize) -> Result<NetworkSpec, HarnessError> {
        let spec = match self.network.arch {
            Arch::Mlp => NetworkSpec::mlp(sample_shape.iter().product(), &self.network.widths, classes),
            Arch::Conv => match sample_shape {
                &[c, h, w] => NetworkSpec::conv_stack([c, h, w], &self.network.widths, classes),
                other => {
                    return Err(HarnessError::Config(format!(
                        "conv networks need (c, h, w) samples, got {other:?}"
                    )))
                }
            },
        };
        spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }
}
