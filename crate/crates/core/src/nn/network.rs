use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::loss::softmax_rows;
use super::spec::{ActShape, LayerSpec, NetworkSpec};
use super::NnError;
use crate::seed;
use crate::tensor::Tensor;

/// Weight and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One gradient (or velocity) tensor pair per parametric layer.
pub type Gradients = Vec<LayerParams>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams>,
    pub init_seed: u64,
}

impl Network {
    /// Builds a network from explicit parameters, checking every shape.
    pub fn from_params(spec: NetworkSpec, params: Vec<LayerParams>, init_seed: u64) -> Result<Self, NnError> {
        let net = Self {
            spec,
            params,
            init_seed,
        };
        net.check_params()?;
        Ok(net)
    }

    pub fn check_params(&self) -> Result<(), NnError> {
        self.spec.validate()?;
        let layers: Vec<&LayerSpec> = self.spec.layers.iter().filter(|l| l.is_parametric()).collect();
        if layers.len() != self.params.len() {
            return Err(NnError::ParamShape {
                layer: layers.len().min(self.params.len()),
            });
        }
        for (i, (l, p)) in layers.iter().zip(&self.params).enumerate() {
            if Some(p.weight.shape().to_vec()) != l.weight_shape()
                || p.bias.shape() != [l.out_channels().unwrap_or(0)]
            {
                return Err(NnError::ParamShape { layer: i });
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Parametric layer specs in order.
    pub fn parametric_layers(&self) -> Vec<LayerSpec> {
        self.spec.layers.iter().copied().filter(LayerSpec::is_parametric).collect()
    }

    /// Same network with every parameter set to zero.
    pub fn zeros_like(&self) -> Gradients {
        self.params
            .iter()
            .map(|p| LayerParams {
                weight: Tensor::zeros(p.weight.shape().to_vec()),
                bias: Tensor::zeros(p.bias.shape().to_vec()),
            })
            .collect()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            for v in p.weight.data().iter().chain(p.bias.data()) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}

/// Seeded He-uniform initialization: weights ~ U(±√(6/fan_in)), which has
/// standard deviation √(2/fan_in); biases ~ U(±1/√fan_in).
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<Network, NnError> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut params = Vec::new();
    for layer in spec.layers.iter().filter(|l| l.is_parametric()) {
        let fan_in = layer.fan_in().unwrap_or(1) as f64;
        let w_lim = (6.0 / fan_in).sqrt();
        let b_lim = 1.0 / fan_in.sqrt();
        let wshape = layer.weight_shape().unwrap_or_default();
        let wlen = wshape.iter().product();
        let weight: Vec<f64> = (0..wlen).map(|_| rng.random_range(-w_lim..w_lim)).collect();
        let out = layer.out_channels().unwrap_or(0);
        let bias: Vec<f64> = (0..out).map(|_| rng.random_range(-b_lim..b_lim)).collect();
        params.push(LayerParams {
            weight: Tensor::new(wshape, weight)?,
            bias: Tensor::new(vec![out], bias)?,
        });
    }
    Ok(Network {
        spec: spec.clone(),
        params,
        init_seed: seed,
    })
}

/// Activations recorded by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, flat per batch.
    inputs: Vec<Vec<f64>>,
    shapes: Vec<ActShape>,
    batch: usize,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Input activation of layer `pos` as a `(batch, features)` tensor.
    pub fn layer_input(&self, pos: usize) -> Tensor {
        let width = self.shapes[pos].numel();
        Tensor::new(vec![self.batch, width], self.inputs[pos].clone())
            .expect("cache buffers match recorded shapes")
    }
}

fn check_batch(net: &Network, batch: &Tensor) -> Result<Vec<ActShape>, NnError> {
    let shapes = net.spec.shapes()?;
    let sample = &batch.shape()[1.min(batch.shape().len())..];
    if batch.shape().len() < 2 || sample != net.spec.input_shape.as_slice() {
        let mut expected = vec![batch.shape().first().copied().unwrap_or(0)];
        expected.extend_from_slice(&net.spec.input_shape);
        return Err(NnError::InputShape {
            expected,
            actual: batch.shape().to_vec(),
        });
    }
    Ok(shapes)
}

/// Final activations, per-layer shapes and the recorded layer inputs.
type LayerRun = (Vec<f64>, Vec<ActShape>, Vec<Vec<f64>>);

/// Runs the first `upto` layers, optionally recording each layer's input.
fn run_layers(
    net: &Network,
    batch: &Tensor,
    upto: usize,
    keep: bool,
) -> Result<LayerRun, NnError> {
    let shapes = check_batch(net, batch)?;
    let n = batch.rows();
    let mut inputs = Vec::new();
    let mut cur = batch.data().to_vec();
    let mut p = 0;
    for (i, layer) in net.spec.layers[..upto].iter().enumerate() {
        let (ins, outs) = (shapes[i], shapes[i + 1]);
        let next = match *layer {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                let lp = &net.params[p];
                p += 1;
                kernels::dense_forward(&cur, lp.weight.data(), lp.bias.data(), n, in_units, out_units)
            }
            LayerSpec::Conv2d { .. } => {
                let lp = &net.params[p];
                p += 1;
                kernels::conv_forward(&cur, lp.weight.data(), lp.bias.data(), n, geom(layer, ins, outs))
            }
            LayerSpec::Relu => kernels::relu_forward(&cur),
            LayerSpec::Flatten => {
                if keep {
                    inputs.push(cur.clone());
                }
                continue;
            }
            LayerSpec::GlobalAvgPool => {
                let ActShape::Map { c, h, w } = ins else { unreachable!() };
                kernels::gap_forward(&cur, n, c, h * w)
            }
        };
        let prev = std::mem::replace(&mut cur, next);
        if keep {
            inputs.push(prev);
        }
    }
    Ok((cur, shapes, inputs))
}

fn geom(layer: &LayerSpec, ins: ActShape, outs: ActShape) -> ConvGeom {
    let (
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        },
        ActShape::Map { h, w, .. },
        ActShape::Map {
            h: h_out, w: w_out, ..
        },
    ) = (*layer, ins, outs)
    else {
        unreachable!("conv geometry requested for a non-conv layer")
    };
    ConvGeom {
        in_ch,
        out_ch,
        kernel,
        stride,
        pad,
        h,
        w,
        h_out,
        w_out,
    }
}

/// Runs `batch` (shape `(n, input_shape…)`) through the network.
pub fn forward(net: &Network, batch: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
    let (out, shapes, inputs) = run_layers(net, batch, net.spec.layers.len(), true)?;
    let n = batch.rows();
    let logits = Tensor::new(vec![n, net.spec.num_classes], out)?;
    let cache = ForwardCache {
        inputs,
        shapes,
        batch: n,
        fingerprint: net.fingerprint(),
    };
    Ok((logits, cache))
}

/// Forward pass without recording activations.
pub(crate) fn logits(net: &Network, batch: &Tensor) -> Result<Tensor, NnError> {
    let (out, _, _) = run_layers(net, batch, net.spec.layers.len(), false)?;
    Ok(Tensor::new(vec![batch.rows(), net.spec.num_classes], out)?)
}

pub fn predict_proba(net: &Network, batch: &Tensor) -> Result<Tensor, NnError> {
    Ok(softmax_rows(&logits(net, batch)?))
}

/// Activation entering the final parametric layer, shape `(n, penult_dim)`.
pub fn penultimate_embeddings(net: &Network, batch: &Tensor) -> Result<Tensor, NnError> {
    let last = *net
        .spec
        .parametric_positions()
        .last()
        .ok_or(NnError::InvalidSpec {
            layer: 0,
            reason: "no parametric layer".into(),
        })?;
    let (out, shapes, _) = run_layers(net, batch, last, false)?;
    Ok(Tensor::new(vec![batch.rows(), shapes[last].numel()], out)?)
}

/// Exact reverse-mode gradients of the loss whose logit gradient is `dlogits`.
pub fn backward(net: &Network, cache: &ForwardCache, dlogits: &Tensor) -> Result<Gradients, NnError> {
    if cache.fingerprint != net.fingerprint() || cache.inputs.len() != net.spec.layers.len() {
        return Err(NnError::StaleCache);
    }
    if dlogits.shape() != [cache.batch, net.spec.num_classes] {
        return Err(NnError::LogitShape {
            left: dlogits.shape().to_vec(),
            right: vec![cache.batch, net.spec.num_classes],
        });
    }
    let n = cache.batch;
    let mut grads = net.zeros_like();
    let mut p = net.params.len();
    let mut dy = dlogits.data().to_vec();
    for (i, layer) in net.spec.layers.iter().enumerate().rev() {
        let x = &cache.inputs[i];
        dy = match *layer {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                p -= 1;
                let (dx, dw, db) =
                    kernels::dense_backward(x, net.params[p].weight.data(), &dy, n, in_units, out_units);
                grads[p].weight.data_mut().copy_from_slice(&dw);
                grads[p].bias.data_mut().copy_from_slice(&db);
                dx
            }
            LayerSpec::Conv2d { .. } => {
                p -= 1;
                let g = geom(layer, cache.shapes[i], cache.shapes[i + 1]);
                let (dx, dw, db) = kernels::conv_backward(x, net.params[p].weight.data(), &dy, n, g);
                grads[p].weight.data_mut().copy_from_slice(&dw);
                grads[p].bias.data_mut().copy_from_slice(&db);
                dx
            }
            LayerSpec::Relu => kernels::relu_backward(x, &dy),
            LayerSpec::Flatten => dy,
            LayerSpec::GlobalAvgPool => {
                let ActShape::Map { h, w, .. } = cache.shapes[i] else { unreachable!() };
                kernels::gap_backward(&dy, h * w)
            }
        };
    }
    Ok(grads)
}

/// Total scalar parameters, biases included.
pub fn param_count(net: &Network) -> usize {
    net.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::cross_entropy;

    fn dense(i: usize, o: usize) -> LayerSpec {
        LayerSpec::Dense {
            in_units: i,
            out_units: o,
        }
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::mlp(4, &[5], 3);
        let a = init_network(&spec, 7).unwrap();
        let b = init_network(&spec, 7).unwrap();
        let c = init_network(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn dense_param_shapes_and_count() {
        let net = init_network(&NetworkSpec::mlp(3, &[], 2), 1).unwrap();
        assert_eq!(net.params[0].weight.shape(), &[2, 3]);
        assert_eq!(net.params[0].bias.shape(), &[2]);
        assert_eq!(param_count(&net), 8);
        let conv = NetworkSpec::new(
            vec![1, 3, 3],
            vec![
                LayerSpec::Conv2d {
                    in_ch: 1,
                    out_ch: 2,
                    kernel: 3,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::Flatten,
            ],
            2,
        );
        assert_eq!(param_count(&init_network(&conv, 1).unwrap()), 20);
    }

    #[test]
    fn zero_weights_yield_bias_logits() {
        let mut net = init_network(&NetworkSpec::mlp(4, &[6], 3), 3).unwrap();
        for p in &mut net.params {
            p.weight.data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![2, 4], vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let (logits, _) = forward(&net, &x).unwrap();
        // hidden = relu(b1); output = b2 + W2·relu(b1) = b2
        for r in 0..2 {
            assert_eq!(logits.row(r), net.params[1].bias.data());
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = init_network(&NetworkSpec::mlp(4, &[6], 3), 3).unwrap();
        let x = Tensor::new(vec![5, 4], (0..20).map(|v| v as f64 / 7.0).collect()).unwrap();
        let (a, _) = forward(&net, &x).unwrap();
        let (b, _) = forward(&net, &x).unwrap();
        assert_eq!(a.shape(), &[5, 3]);
        assert_eq!(a, b);
        let bad = Tensor::new(vec![5, 2], vec![0.0; 10]).unwrap();
        assert!(matches!(forward(&net, &bad), Err(NnError::InputShape { .. })));
    }

    #[test]
    fn embeddings_have_penultimate_width() {
        let spec = NetworkSpec::new(vec![4], vec![dense(4, 8), LayerSpec::Relu, dense(8, 3)], 3);
        let mut net = init_network(&spec, 2).unwrap();
        let x = Tensor::new(vec![2, 4], vec![0.1; 8]).unwrap();
        let e = penultimate_embeddings(&net, &x).unwrap();
        assert_eq!(e.shape(), &[2, 8]);
        assert_eq!(e, penultimate_embeddings(&net, &x).unwrap());
        for p in &mut net.params {
            p.bias.data_mut().fill(0.0);
        }
        let z = penultimate_embeddings(&net, &Tensor::zeros(vec![1, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = init_network(&NetworkSpec::conv_stack([1, 3, 3], &[2], 2), 5).unwrap();
        let x = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|v| v as f64 * 0.1).collect()).unwrap();
        let (_, cache) = forward(&net, &x).unwrap();
        let g = backward(&net, &cache, &Tensor::zeros(vec![2, 2])).unwrap();
        assert!(g.iter().all(|p| p.weight.data().iter().chain(p.bias.data()).all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = init_network(&NetworkSpec::mlp(2, &[3], 2), 5).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap();
        let (logits, cache) = forward(&net, &x).unwrap();
        let (_, d) = cross_entropy(&logits, &[1]).unwrap();
        net.params[0].weight.data_mut()[0] += 1.0;
        assert_eq!(backward(&net, &cache, &d), Err(NnError::StaleCache));
    }
}
