//! Transplanting a trained pruned network back into its untrained parent,
//! and distillation fine-tuning of the result.
//!
//! Every surviving coordinate `(kept_out[ℓ] × kept_in[ℓ])` of the parent
//! takes the trained compact value; every other coordinate keeps its
//! initialization. With the parent's non-surviving coordinates zeroed, the
//! fused network computes exactly what the pruned network computes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{self, EpochStats, KdConfig, Network, NnError, TrainConfig};
use crate::prune::{tap_width, PrunedTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuseError {
    #[error("parametric layer {layer}: {what} does not match the topology")]
    SpecMismatch { layer: usize, what: &'static str },
    #[error("dense network has init seed {found} but the topology was carved from seed {expected}")]
    Provenance { expected: u64, found: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-layer scalar counts (weights and biases) for one fusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFusion {
    pub transplanted_weights: usize,
    pub retained_init_weights: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionReport {
    pub layers: Vec<LayerFusion>,
    /// SHA-256 over the transplanted values (little-endian `f64` bytes, layer
    /// order, weights before biases).
    pub checksum: String,
}

impl FusionReport {
    pub fn transplanted(&self) -> usize {
        self.layers.iter().map(|l| l.transplanted_weights).sum()
    }

    pub fn total(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.transplanted_weights + l.retained_init_weights)
            .sum()
    }
}

fn first_mismatch(a: &Network, b: &nn::NetworkSpec) -> usize {
    let la = a.parametric_layers();
    let lb: Vec<_> = b.layers.iter().filter(|l| l.is_parametric()).collect();
    la.iter().zip(&lb).position(|(x, y)| x != *y).unwrap_or(la.len().min(lb.len()))
}

/// `θ_F = Fuse(θ, θ_p*)`.
pub fn fuse(
    theta_init: &Network,
    theta_p_star: &Network,
    topo: &PrunedTopology,
) -> Result<(Network, FusionReport), FuseError> {
    if theta_init.spec != topo.parent_spec {
        return Err(FuseError::SpecMismatch {
            layer: first_mismatch(theta_init, &topo.parent_spec),
            what: "dense network spec",
        });
    }
    if theta_p_star.spec != topo.compact_spec {
        return Err(FuseError::SpecMismatch {
            layer: first_mismatch(theta_p_star, &topo.compact_spec),
            what: "pruned network spec",
        });
    }
    if theta_init.init_seed != topo.parent_seed {
        return Err(FuseError::Provenance {
            expected: topo.parent_seed,
            found: theta_init.init_seed,
        });
    }
    theta_init.check_params()?;
    theta_p_star.check_params()?;

    let mut fused = theta_init.clone();
    let mut hasher = Sha256::new();
    let mut layers = Vec::new();
    for (l, layer) in theta_init.parametric_layers().iter().enumerate() {
        let (outs, ins) = (&topo.kept_out[l], &topo.kept_in[l]);
        let tap = tap_width(layer);
        let dst = &mut fused.params[l];
        let src = &theta_p_star.params[l];
        let row = dst.weight.row_len();
        let compact_row = src.weight.row_len();
        for (a, &o) in outs.iter().enumerate() {
            for (b, &i) in ins.iter().enumerate() {
                let to = o * row + i * tap;
                let from = a * compact_row + b * tap;
                let vals = &src.weight.data()[from..from + tap];
                dst.weight.data_mut()[to..to + tap].copy_from_slice(vals);
                for v in vals {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        for (a, &o) in outs.iter().enumerate() {
            let v = src.bias.data()[a];
            dst.bias.data_mut()[o] = v;
            hasher.update(v.to_le_bytes());
        }
        let transplanted = src.weight.len() + src.bias.len();
        layers.push(LayerFusion {
            transplanted_weights: transplanted,
            retained_init_weights: dst.weight.len() + dst.bias.len() - transplanted,
        });
    }
    let report = FusionReport {
        layers,
        checksum: hex::encode(hasher.finalize()),
    };
    Ok((fused, report))
}

/// Fine-tunes the fused network on the labeled set. With `kd` the pruned
/// teacher's tempered outputs are distilled in; the teacher is read-only.
pub fn finetune_fused(
    theta_f: &Network,
    teacher: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
    kd: Option<KdConfig>,
    eval: Option<&Dataset>,
) -> Result<(Network, Vec<EpochStats>), NnError> {
    nn::train(theta_f, data, cfg, kd.map(|k| (teacher, k)), eval)
}
