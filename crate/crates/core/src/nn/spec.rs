use serde::{Deserialize, Serialize};

use super::NnError;

/// One layer of a feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_units: usize,
        out_units: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Flatten,
    GlobalAvgPool,
}

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Output units (Dense) or channels (Conv2d).
    pub fn out_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { out_units, .. } => Some(out_units),
            LayerSpec::Conv2d { out_ch, .. } => Some(out_ch),
            _ => None,
        }
    }

    pub fn in_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_units, .. } => Some(in_units),
            LayerSpec::Conv2d { in_ch, .. } => Some(in_ch),
            _ => None,
        }
    }

    /// Weight tensor shape: `(out, in)` or `(out_ch, in_ch, k, k)`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => Some(vec![out_units, in_units]),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => Some(vec![out_ch, in_ch, kernel, kernel]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_units, .. } => Some(in_units),
            LayerSpec::Conv2d { in_ch, kernel, .. } => Some(in_ch * kernel * kernel),
            _ => None,
        }
    }

    /// Copy of this layer with new channel counts (non-parametric layers unchanged).
    pub fn with_channels(&self, input: usize, output: usize) -> LayerSpec {
        match *self {
            LayerSpec::Dense { .. } => LayerSpec::Dense {
                in_units: input,
                out_units: output,
            },
            LayerSpec::Conv2d {
                kernel, stride, pad, ..
            } => LayerSpec::Conv2d {
                in_ch: input,
                out_ch: output,
                kernel,
                stride,
                pad,
            },
            other => other,
        }
    }
}

/// Per-sample activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Flat(usize),
    Map { c: usize, h: usize, w: usize },
}

impl ActShape {
    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [n] if n > 0 => Some(ActShape::Flat(n)),
            [c, h, w] if c > 0 && h > 0 && w > 0 => Some(ActShape::Map { c, h, w }),
            _ => None,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Flat(n) => vec![n],
            ActShape::Map { c, h, w } => vec![c, h, w],
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Map { c, h, w } => c * h * w,
        }
    }

    /// Channel count (Map) or feature count (Flat).
    pub fn channels(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Map { c, .. } => c,
        }
    }
}

/// An ordered layer stack together with its per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, num_classes: usize) -> Self {
        Self {
            input_shape,
            layers,
            num_classes,
        }
    }

    /// `Dense → ReLU → … → Dense(C)` multilayer perceptron.
    pub fn mlp(input: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                in_units: prev,
                out_units: h,
            });
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            in_units: prev,
            out_units: num_classes,
        });
        Self::new(vec![input], layers, num_classes)
    }

    /// Stack of same-padded 3×3 stride-1 conv+ReLU blocks, flattened into a
    /// dense classifier.
    pub fn conv_stack(input: [usize; 3], channels: &[usize], num_classes: usize) -> Self {
        let [c0, h, w] = input;
        let mut layers = Vec::new();
        let mut prev = c0;
        for &c in channels {
            layers.push(LayerSpec::Conv2d {
                in_ch: prev,
                out_ch: c,
                kernel: 3,
                stride: 1,
                pad: 1,
            });
            layers.push(LayerSpec::Relu);
            prev = c;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            in_units: prev * h * w,
            out_units: num_classes,
        });
        Self::new(input.to_vec(), layers, num_classes)
    }

    /// Positions (into `layers`) of the parametric layers.
    pub fn parametric_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parametric())
            .map(|(i, _)| i)
            .collect()
    }

    /// Infers activation shapes for the spec's own input shape.
    pub fn shapes(&self) -> Result<Vec<ActShape>, NnError> {
        self.shapes_for(&self.input_shape)
    }

    /// Infers the activation shape before every layer and after the last
    /// (`layers.len() + 1` entries), checking every contract on the way.
    pub fn shapes_for(&self, input_shape: &[usize]) -> Result<Vec<ActShape>, NnError> {
        let bad = |layer: usize, reason: String| NnError::InvalidSpec { layer, reason };
        let mut cur = ActShape::from_dims(input_shape)
            .ok_or_else(|| bad(0, format!("unsupported input shape {input_shape:?}")))?;
        if self.num_classes == 0 {
            return Err(bad(0, "num_classes must be positive".into()));
        }
        let mut shapes = vec![cur];
        let mut last_param_out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (
                    LayerSpec::Dense {
                        in_units,
                        out_units,
                    },
                    ActShape::Flat(n),
                ) => {
                    if in_units == 0 || out_units == 0 {
                        return Err(bad(i, "dense sizes must be positive".into()));
                    }
                    if in_units != n {
                        return Err(bad(i, format!("dense expects {in_units} inputs, receives {n}")));
                    }
                    ActShape::Flat(out_units)
                }
                (LayerSpec::Dense { .. }, s) => {
                    return Err(bad(i, format!("dense layer receives non-flat input {:?}", s.dims())))
                }
                (
                    LayerSpec::Conv2d {
                        in_ch,
                        out_ch,
                        kernel,
                        stride,
                        pad,
                    },
                    ActShape::Map { c, h, w },
                ) => {
                    if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(i, "conv sizes must be positive".into()));
                    }
                    if in_ch != c {
                        return Err(bad(i, format!("conv expects {in_ch} channels, receives {c}")));
                    }
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(bad(i, format!("kernel {kernel} exceeds padded input {h}x{w}")));
                    }
                    ActShape::Map {
                        c: out_ch,
                        h: (h + 2 * pad - kernel) / stride + 1,
                        w: (w + 2 * pad - kernel) / stride + 1,
                    }
                }
                (LayerSpec::Conv2d { .. }, s) => {
                    return Err(bad(i, format!("conv layer receives flat input {:?}", s.dims())))
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => ActShape::Flat(s.numel()),
                (LayerSpec::GlobalAvgPool, ActShape::Map { c, .. }) => ActShape::Flat(c),
                (LayerSpec::GlobalAvgPool, _) => {
                    return Err(bad(i, "global average pool needs a feature map".into()))
                }
            };
            if layer.is_parametric() {
                last_param_out = Some((i, layer.out_channels().unwrap_or(0)));
            }
            shapes.push(cur);
        }
        let (last_idx, out) =
            last_param_out.ok_or_else(|| bad(0, "spec has no parametric layer".into()))?;
        if out != self.num_classes {
            return Err(bad(
                last_idx,
                format!("final parametric layer emits {out}, expected {} classes", self.num_classes),
            ));
        }
        if cur.numel() != self.num_classes {
            return Err(bad(
                self.layers.len() - 1,
                format!("network output {:?} is not {} logits", cur.dims(), self.num_classes),
            ));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.shapes().map(|_| ())
    }
}

/// Per-layer forward FLOPs for a single input.
pub fn layer_flops(spec: &NetworkSpec, input_shape: &[usize]) -> Result<Vec<u64>, NnError> {
    let shapes = spec.shapes_for(input_shape)?;
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let (inp, out) = (shapes[i], shapes[i + 1]);
            match *layer {
                LayerSpec::Dense {
                    in_units,
                    out_units,
                } => 2 * (in_units * out_units) as u64,
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let spatial = (out.numel() / out_ch) as u64;
                    2 * (out_ch * in_ch * kernel * kernel) as u64 * spatial
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool => inp.numel() as u64,
                LayerSpec::Flatten => 0,
            }
        })
        .collect())
}

/// Forward FLOPs of one input through the network.
///
/// Dense layers cost `2·in·out`, convolutions `2·out·in·k²·H_out·W_out`, and
/// ReLU / pooling one op per input activation. Flatten is free.
pub fn forward_flops(spec: &NetworkSpec, input_shape: &[usize]) -> Result<u64, NnError> {
    Ok(layer_flops(spec, input_shape)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(in_ch: usize, out_ch: usize, kernel: usize, pad: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad,
        }
    }

    #[test]
    fn dense_flops() {
        let spec = NetworkSpec::mlp(3, &[], 2);
        assert_eq!(forward_flops(&spec, &[3]).unwrap(), 12);
    }

    #[test]
    fn pointwise_conv_flops() {
        let spec = NetworkSpec::new(vec![1, 4, 4], vec![conv(1, 1, 1, 0), LayerSpec::GlobalAvgPool], 1);
        assert_eq!(layer_flops(&spec, &[1, 4, 4]).unwrap()[0], 32);
    }

    #[test]
    fn doubling_channels_quadruples_conv_flops() {
        let base = NetworkSpec::new(vec![2, 3, 3], vec![conv(2, 4, 3, 1), conv(4, 3, 3, 0)], 3);
        let doubled = NetworkSpec::new(vec![4, 3, 3], vec![conv(4, 8, 3, 1), conv(8, 6, 3, 0)], 6);
        let a = forward_flops(&base, &[2, 3, 3]).unwrap();
        let b = forward_flops(&doubled, &[4, 3, 3]).unwrap();
        assert_eq!(a, 2 * 4 * 2 * 9 * 9 + 2 * 3 * 4 * 9);
        assert_eq!(b, 4 * a);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = NetworkSpec::new(
            vec![3],
            vec![
                LayerSpec::Dense { in_units: 3, out_units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_units: 5, out_units: 2 },
            ],
            2,
        );
        match spec.validate() {
            Err(NnError::InvalidSpec { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("unexpected {other:?}"),
        }
        let wrong_classes = NetworkSpec::mlp(3, &[4], 2);
        let mut s = wrong_classes.clone();
        s.num_classes = 3;
        assert!(s.validate().is_err());
        assert!(NetworkSpec::new(vec![3], vec![LayerSpec::Relu], 3).validate().is_err());
    }

    #[test]
    fn conv_stack_shapes() {
        let spec = NetworkSpec::conv_stack([1, 4, 4], &[8, 6], 3);
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes.last(), Some(&ActShape::Flat(3)));
        assert_eq!(shapes[5], ActShape::Flat(6 * 16));
    }
}
