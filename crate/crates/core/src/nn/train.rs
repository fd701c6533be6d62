use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, kd_composite_loss, predict_classes};
use super::network::{backward, forward, logits, Gradients, Network};
use super::NnError;
use crate::data::Dataset;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle_each_epoch: bool,
}

fn default_shuffle() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        // lr = 0 is accepted so that frozen runs can be expressed
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Distillation settings: temperature `T` and hard-label weight `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: 4.0,
            lambda: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_accuracy: Option<f64>,
}

/// `v ← μ·v + g; w ← w − lr·v`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
) -> Result<(), NnError> {
    if grads.len() != net.params.len() || velocity.len() != net.params.len() {
        return Err(NnError::ParamShape {
            layer: grads.len().min(velocity.len()),
        });
    }
    for (i, ((p, g), v)) in net.params.iter_mut().zip(grads).zip(velocity.iter_mut()).enumerate() {
        let pairs = [
            (&mut p.weight, &g.weight, &mut v.weight),
            (&mut p.bias, &g.bias, &mut v.bias),
        ];
        for (w, g, v) in pairs {
            if w.shape() != g.shape() || w.shape() != v.shape() {
                return Err(NnError::ParamShape { layer: i });
            }
            for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        }
    }
    Ok(())
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let preds = predict_classes(&logits(net, &data.inputs)?);
    let hits = preds.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Minibatch SGD on `data`. With a teacher, the distillation loss drives the
/// updates; the teacher is only read.
///
/// The returned history has one entry per epoch. `eval` is scored after each
/// epoch for reporting and never affects the updates.
pub fn train(
    net: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
    teacher: Option<(&Network, KdConfig)>,
    eval: Option<&Dataset>,
) -> Result<(Network, Vec<EpochStats>), NnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if let Some((t, _)) = teacher {
        if t.num_classes() != net.num_classes() {
            return Err(NnError::ClassMismatch {
                student: net.num_classes(),
                teacher: t.num_classes(),
            });
        }
    }
    let mut net = net.clone();
    let mut velocity = net.zeros_like();
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle_each_epoch {
            seed::shuffle(&mut order, &mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (out, cache) = forward(&net, &x)?;
            let (loss, dlogits) = match teacher {
                None => cross_entropy(&out, &y)?,
                Some((t, kd)) => {
                    let tl = logits(t, &x)?;
                    kd_composite_loss(&out, &tl, &y, kd.temperature, kd.lambda)?
                }
            };
            let grads = backward(&net, &cache, &dlogits)?;
            sgd_step(&mut net, &grads, &mut velocity, cfg.learning_rate, cfg.momentum)?;
            loss_sum += loss;
            batches += 1;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            train_accuracy: accuracy(&net, data)?,
            eval_accuracy: eval.map(|e| accuracy(&net, e)).transpose()?,
        });
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{init_network, NetworkSpec};

    #[test]
    fn sgd_plain_step() {
        let spec = NetworkSpec::mlp(1, &[], 1);
        let mut net = init_network(&spec, 0).unwrap();
        net.params[0].weight.data_mut()[0] = 1.0;
        net.params[0].bias.data_mut()[0] = 0.0;
        let mut g = net.zeros_like();
        g[0].weight.data_mut()[0] = 0.5;
        let mut v = net.zeros_like();
        sgd_step(&mut net, &g, &mut v, 0.1, 0.0).unwrap();
        assert_eq!(net.params[0].weight.data()[0], 0.95);
        assert_eq!(net.params[0].bias.data()[0], 0.0);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = init_network(&NetworkSpec::mlp(3, &[4], 2), 1).unwrap();
        let before = net.clone();
        let g = net.zeros_like();
        let mut v = net.zeros_like();
        sgd_step(&mut net, &g, &mut v, 0.1, 0.9).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut net = init_network(&NetworkSpec::mlp(1, &[], 1), 0).unwrap();
        net.params[0].weight.data_mut()[0] = 0.0;
        let mut g = net.zeros_like();
        g[0].weight.data_mut()[0] = 1.0;
        let mut v = net.zeros_like();
        sgd_step(&mut net, &g, &mut v, 0.1, 0.9).unwrap();
        sgd_step(&mut net, &g, &mut v, 0.1, 0.9).unwrap();
        // w1 = -0.1; v2 = 1.9; w2 = -0.1 - 0.19
        let w = net.params[0].weight.data()[0];
        assert!((w - (-0.29)).abs() < 1e-15, "{w}");
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut net = init_network(&NetworkSpec::mlp(2, &[], 2), 0).unwrap();
        let other = init_network(&NetworkSpec::mlp(3, &[], 2), 0).unwrap();
        let g = other.zeros_like();
        let mut v = net.zeros_like();
        assert!(sgd_step(&mut net, &g, &mut v, 0.1, 0.0).is_err());
    }

    #[test]
    fn zero_lr_leaves_network_untouched() {
        let data = gen_blobs(1, 1, 2, 0.1, 3).unwrap();
        let net = init_network(&NetworkSpec::mlp(2, &[3], 1), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(&net, &data, &cfg, None, None).unwrap();
        assert_eq!(trained, net);
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn separable_blobs_are_fitted() {
        let data = gen_blobs(200, 2, 4, 0.3, 11).unwrap();
        let net = init_network(&NetworkSpec::mlp(4, &[8], 2), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let (_, hist) = train(&net, &data, &cfg, None, None).unwrap();
        assert_eq!(hist.last().unwrap().train_accuracy, 1.0);
        let (_, again) = train(&net, &data, &cfg, None, None).unwrap();
        assert_eq!(hist, again);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = gen_blobs(10, 2, 2, 0.1, 1).unwrap();
        let net = init_network(&NetworkSpec::mlp(2, &[], 2), 5).unwrap();
        let zero_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&net, &data, &zero_epochs, None, None).is_err());
        let empty = data.subset(&[]);
        assert_eq!(
            train(&net, &empty, &TrainConfig::default(), None, None).unwrap_err(),
            NnError::EmptyDataset
        );
        let teacher = init_network(&NetworkSpec::mlp(2, &[], 3), 5).unwrap();
        assert!(matches!(
            train(&net, &data, &TrainConfig::default(), Some((&teacher, KdConfig::default())), None),
            Err(NnError::ClassMismatch { .. })
        ));
    }

    #[test]
    fn teacher_is_never_modified() {
        let data = gen_blobs(40, 2, 3, 0.5, 2).unwrap();
        let student = init_network(&NetworkSpec::mlp(3, &[4], 2), 1).unwrap();
        let teacher = init_network(&NetworkSpec::mlp(3, &[2], 2), 9).unwrap();
        let snapshot = teacher.clone();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        train(&student, &data, &cfg, Some((&teacher, KdConfig::default())), None).unwrap();
        assert_eq!(teacher, snapshot);
    }
}
