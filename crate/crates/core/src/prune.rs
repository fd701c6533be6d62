//! One-shot structured channel pruning at initialization.
//!
//! Channels (conv output maps or dense units) are scored by the L2 norm of
//! their weight slice, ranked globally, and removed lowest-first until the
//! requested fraction of prunable channels is gone. The classifier layer is
//! never pruned. [`build_pruned`] slices the surviving weights out of the
//! parent network without re-drawing anything, and [`PrunedTopology`] keeps
//! the index maps needed to put them back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ActShape, LayerParams, LayerSpec, Network, NetworkSpec, NnError};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("sparsity must lie in [0, 1), got {0}")]
    InvalidSparsity(f64),
    #[error("sparsity {requested} unreachable: keeping one channel per layer caps it at {max_achievable}")]
    Unachievable { requested: f64, max_achievable: f64 },
    #[error("no channel scores supplied")]
    EmptyScores,
    #[error("mask layer {layer}: {reason}")]
    InvalidMask { layer: usize, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Fraction of prunable channels to remove, `0 ≤ p < 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SparsityTarget(f64);

impl SparsityTarget {
    pub fn new(p: f64) -> Result<Self, PruneError> {
        if (0.0..1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(PruneError::InvalidSparsity(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SparsityTarget {
    type Error = PruneError;
    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<SparsityTarget> for f64 {
    fn from(p: SparsityTarget) -> f64 {
        p.0
    }
}

/// Per parametric layer, one non-negative score per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores(pub Vec<Vec<f64>>);

/// Per parametric layer keep flags; `true` keeps the channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMask(pub Vec<Vec<bool>>);

impl ChannelMask {
    pub fn all_true(net: &Network) -> Self {
        Self(
            net.parametric_layers()
                .iter()
                .map(|l| vec![true; l.out_channels().unwrap_or(0)])
                .collect(),
        )
    }

    /// Kept channel indices per layer, ascending.
    pub fn kept(&self) -> Vec<Vec<usize>> {
        self.0
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
            .collect()
    }

    fn prunable(&self) -> &[Vec<bool>] {
        &self.0[..self.0.len().saturating_sub(1)]
    }

    /// Kept prunable channels over total prunable channels (1 when nothing
    /// is prunable).
    pub fn kept_fraction(&self) -> f64 {
        let total: usize = self.prunable().iter().map(Vec::len).sum();
        if total == 0 {
            return 1.0;
        }
        let kept = self.prunable().iter().flatten().filter(|&&k| k).count();
        kept as f64 / total as f64
    }

    pub fn validate_for(&self, net: &Network) -> Result<(), PruneError> {
        let layers = net.parametric_layers();
        if layers.len() != self.0.len() {
            return Err(PruneError::InvalidMask {
                layer: self.0.len().min(layers.len()),
                reason: format!("{} mask layers for {} parametric layers", self.0.len(), layers.len()),
            });
        }
        for (i, (m, l)) in self.0.iter().zip(&layers).enumerate() {
            let bad = |reason: String| PruneError::InvalidMask { layer: i, reason };
            if Some(m.len()) != l.out_channels() {
                return Err(bad(format!("{} flags for {:?} channels", m.len(), l.out_channels())));
            }
            if !m.iter().any(|&k| k) {
                return Err(bad("every layer must keep at least one channel".into()));
            }
            if i + 1 == layers.len() && !m.iter().all(|&k| k) {
                return Err(bad("the classifier layer cannot be pruned".into()));
            }
        }
        Ok(())
    }
}

/// `1 − kept/total` over the prunable (non-classifier) channels.
pub fn achieved_sparsity(mask: &ChannelMask) -> f64 {
    let total: usize = mask.prunable().iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let pruned = mask.prunable().iter().flatten().filter(|&&k| !k).count();
    pruned as f64 / total as f64
}

/// L2 norm of each output channel's weight slice; biases are ignored.
pub fn score_channels(net: &Network) -> ChannelScores {
    ChannelScores(
        net.params
            .iter()
            .map(|p| {
                let width = p.weight.row_len();
                p.weight
                    .data()
                    .chunks(width)
                    .map(|row| row.iter().map(|w| w * w).sum::<f64>().sqrt())
                    .collect()
            })
            .collect(),
    )
}

/// Converts scores into a keep mask at global sparsity `p`.
///
/// Prunable channels are visited in ascending `(score, layer, channel)` order
/// and removed unless that would empty their layer, stopping as soon as the
/// pruned fraction reaches `p`.
pub fn remove(scores: &ChannelScores, p: SparsityTarget) -> Result<ChannelMask, PruneError> {
    let layers = &scores.0;
    if layers.is_empty() {
        return Err(PruneError::EmptyScores);
    }
    let prunable = &layers[..layers.len() - 1];
    let total: usize = prunable.iter().map(Vec::len).sum();
    let p = p.value();
    let mut mask: Vec<Vec<bool>> = layers.iter().map(|l| vec![true; l.len()]).collect();
    if p == 0.0 {
        return Ok(ChannelMask(mask));
    }
    let removable: usize = prunable.iter().map(|l| l.len().saturating_sub(1)).sum();
    let max_achievable = if total == 0 { 0.0 } else { removable as f64 / total as f64 };
    if total == 0 || max_achievable < p {
        return Err(PruneError::Unachievable {
            requested: p,
            max_achievable,
        });
    }
    let mut order: Vec<(f64, usize, usize)> = prunable
        .iter()
        .enumerate()
        .flat_map(|(l, s)| s.iter().enumerate().map(move |(c, &v)| (v, l, c)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept: Vec<usize> = prunable.iter().map(Vec::len).collect();
    let mut pruned = 0usize;
    for (_, l, c) in order {
        if pruned as f64 / total as f64 >= p {
            break;
        }
        if kept[l] == 1 {
            continue;
        }
        mask[l][c] = false;
        kept[l] -= 1;
        pruned += 1;
    }
    Ok(ChannelMask(mask))
}

/// Compact architecture and the index maps tying it to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedTopology {
    pub parent_spec: NetworkSpec,
    /// `init_seed` of the network the topology was carved from.
    pub parent_seed: u64,
    pub compact_spec: NetworkSpec,
    /// Per parametric layer, surviving output channels in parent coordinates.
    pub kept_out: Vec<Vec<usize>>,
    /// Per parametric layer, surviving input coordinates in parent
    /// coordinates: input channels for conv, flat features for dense (a
    /// flattened feature map expands each kept channel to its spatial block).
    pub kept_in: Vec<Vec<usize>>,
}

impl PrunedTopology {
    /// Derives the topology that `mask` induces on `net`.
    pub fn derive(net: &Network, mask: &ChannelMask) -> Result<Self, PruneError> {
        mask.validate_for(net)?;
        let spec = &net.spec;
        let shapes = spec.shapes()?;
        let kept_out = mask.kept();
        let mut kept_in = Vec::new();
        let mut compact_layers = Vec::new();
        // surviving indices along the current activation's channel/feature axis
        let mut cur: Vec<usize> = (0..shapes[0].channels()).collect();
        let mut p = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                    compact_layers.push(layer.with_channels(cur.len(), kept_out[p].len()));
                    kept_in.push(std::mem::replace(&mut cur, kept_out[p].clone()));
                    p += 1;
                }
                LayerSpec::Flatten => {
                    if let ActShape::Map { h, w, .. } = shapes[i] {
                        let hw = h * w;
                        cur = cur.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect();
                    }
                    compact_layers.push(*layer);
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool => compact_layers.push(*layer),
            }
        }
        let compact_spec = NetworkSpec::new(spec.input_shape.clone(), compact_layers, spec.num_classes);
        compact_spec.validate()?;
        Ok(Self {
            parent_spec: spec.clone(),
            parent_seed: net.init_seed,
            compact_spec,
            kept_out,
            kept_in,
        })
    }

    /// True when nothing was pruned.
    pub fn is_identity(&self) -> bool {
        self.compact_spec == self.parent_spec
    }
}

/// Width of one input coordinate's slice within an output channel's weights
/// (`k·k` for conv, 1 for dense).
pub(crate) fn tap_width(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Conv2d { kernel, .. } => kernel * kernel,
        _ => 1,
    }
}

/// Slices the kept coordinates out of `net`. Every compact parameter is a
/// bit-exact copy of its parent coordinate.
pub fn build_pruned(net: &Network, mask: &ChannelMask) -> Result<(Network, PrunedTopology), PruneError> {
    let topo = PrunedTopology::derive(net, mask)?;
    let layers = net.parametric_layers();
    let mut params = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let src = &net.params[l];
        let (outs, ins) = (&topo.kept_out[l], &topo.kept_in[l]);
        let tap = tap_width(layer);
        let row = src.weight.row_len();
        let mut w = Vec::with_capacity(outs.len() * ins.len() * tap);
        for &o in outs {
            for &i in ins {
                let at = o * row + i * tap;
                w.extend_from_slice(&src.weight.data()[at..at + tap]);
            }
        }
        let mut shape = src.weight.shape().to_vec();
        shape[0] = outs.len();
        shape[1] = ins.len();
        let bias = outs.iter().map(|&o| src.bias.data()[o]).collect();
        params.push(LayerParams {
            weight: Tensor::new(shape, w).map_err(NnError::from)?,
            bias: Tensor::new(vec![outs.len()], bias).map_err(NnError::from)?,
        });
    }
    let pruned = Network::from_params(topo.compact_spec.clone(), params, net.init_seed)?;
    Ok((pruned, topo))
}

/// Scores, masks and slices `net` in one step.
pub fn prune(net: &Network, p: SparsityTarget) -> Result<(Network, PrunedTopology, ChannelMask), PruneError> {
    let mask = remove(&score_channels(net), p)?;
    let (pruned, topo) = build_pruned(net, &mask)?;
    Ok((pruned, topo, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, param_count};

    fn sp(p: f64) -> SparsityTarget {
        SparsityTarget::new(p).unwrap()
    }

    #[test]
    fn l2_scores() {
        let mut net = init_network(&NetworkSpec::mlp(2, &[2], 2), 1).unwrap();
        net.params[0].weight.data_mut().copy_from_slice(&[3.0, 4.0, 0.0, 0.0]);
        let s = score_channels(&net);
        assert_eq!(s.0[0], vec![5.0, 0.0]);
        assert_eq!(s.0[1].len(), 2);
    }

    #[test]
    fn remove_single_prunable_layer() {
        let s = ChannelScores(vec![vec![1.0, 2.0, 3.0, 4.0], vec![9.0; 4]]);
        let m = remove(&s, sp(0.5)).unwrap();
        assert_eq!(m.kept(), vec![vec![2, 3], vec![0, 1, 2, 3]]);
        assert_eq!(achieved_sparsity(&m), 0.5);
    }

    #[test]
    fn remove_respects_min_keep() {
        let s = ChannelScores(vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0], vec![0.0; 3]]);
        let m = remove(&s, sp(0.5)).unwrap();
        assert_eq!(m.kept()[0], vec![3]);
        assert_eq!(m.kept()[1], vec![1, 2, 3]);
        assert_eq!(m.kept()[2], vec![0, 1, 2]);
        assert_eq!(achieved_sparsity(&m), 0.5);
    }

    #[test]
    fn remove_zero_and_unachievable() {
        let s = ChannelScores(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(remove(&s, sp(0.0)).unwrap(), ChannelMask(vec![vec![true; 2]; 2]));
        match remove(&s, sp(0.9)) {
            Err(PruneError::Unachievable { max_achievable, .. }) => assert_eq!(max_achievable, 0.5),
            other => panic!("{other:?}"),
        }
        assert!(SparsityTarget::new(1.0).is_err());
        assert!(SparsityTarget::new(-0.1).is_err());
    }

    #[test]
    fn ties_break_by_layer_then_channel() {
        let s = ChannelScores(vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0]]);
        let m = remove(&s, sp(0.25)).unwrap();
        assert_eq!(m.kept()[0], vec![1]);
        assert_eq!(m.kept()[1], vec![0, 1]);
    }

    #[test]
    fn sparsity_complements_kept_fraction() {
        let m = ChannelMask(vec![vec![true, false, false, true], vec![true, true, false, false], vec![true]]);
        assert_eq!(achieved_sparsity(&m), 0.5);
        assert_eq!(achieved_sparsity(&m) + m.kept_fraction(), 1.0);
    }

    #[test]
    fn identity_pruning_is_bit_identical() {
        let net = init_network(&NetworkSpec::conv_stack([1, 4, 4], &[3, 2], 2), 4).unwrap();
        let (pruned, topo) = build_pruned(&net, &ChannelMask::all_true(&net)).unwrap();
        assert_eq!(pruned, net);
        assert!(topo.is_identity());
    }

    #[test]
    fn positional_slicing() {
        let spec = NetworkSpec::new(
            vec![3],
            vec![
                LayerSpec::Dense { in_units: 3, out_units: 3 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_units: 3, out_units: 2 },
            ],
            2,
        );
        let net = init_network(&spec, 9).unwrap();
        let mask = ChannelMask(vec![vec![true, false, true], vec![true, true]]);
        let (pruned, topo) = build_pruned(&net, &mask).unwrap();
        let w1 = net.params[0].weight.data();
        let w2 = net.params[1].weight.data();
        assert_eq!(pruned.params[0].weight.data(), &[&w1[0..3], &w1[6..9]].concat()[..]);
        assert_eq!(pruned.params[1].weight.data(), &[w2[0], w2[2], w2[3], w2[5]]);
        assert_eq!(topo.kept_out, vec![vec![0, 2], vec![0, 1]]);
        assert!(param_count(&pruned) < param_count(&net));
    }

    #[test]
    fn flatten_expands_kept_channels() {
        let net = init_network(&NetworkSpec::conv_stack([1, 2, 2], &[3], 2), 1).unwrap();
        let mask = ChannelMask(vec![vec![false, true, true], vec![true, true]]);
        let (pruned, topo) = build_pruned(&net, &mask).unwrap();
        assert_eq!(topo.kept_in[1], vec![4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(pruned.params[1].weight.shape(), &[2, 8]);
    }

    #[test]
    fn invalid_masks_rejected() {
        let net = init_network(&NetworkSpec::mlp(2, &[2], 2), 1).unwrap();
        let empty_layer = ChannelMask(vec![vec![false, false], vec![true, true]]);
        assert!(build_pruned(&net, &empty_layer).is_err());
        let cut_classifier = ChannelMask(vec![vec![true, true], vec![true, false]]);
        assert!(build_pruned(&net, &cut_classifier).is_err());
        let wrong_len = ChannelMask(vec![vec![true], vec![true, true]]);
        assert!(build_pruned(&net, &wrong_len).is_err());
    }

    #[test]
    fn topology_json_roundtrip() {
        let net = init_network(&NetworkSpec::mlp(3, &[4], 2), 1).unwrap();
        let (_, topo, _) = prune(&net, sp(0.5)).unwrap();
        let json = serde_json::to_string(&topo).unwrap();
        assert_eq!(serde_json::from_str::<PrunedTopology>(&json).unwrap(), topo);
    }
}
