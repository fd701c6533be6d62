//! Reference implementations and generators shared by the integration tests.
#![allow(dead_code)]

use prunefuse_core::nn::{backward, cross_entropy, forward, init_network, LayerSpec, Network, NetworkSpec};
use prunefuse_core::prune::PrunedTopology;
use prunefuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Small MLP: 1..=5 inputs, up to two hidden layers, 2..=4 classes.
pub fn random_mlp(r: &mut ChaCha8Rng) -> NetworkSpec {
    let input = r.random_range(1..=5);
    let hidden: Vec<usize> = (0..r.random_range(0..=2)).map(|_| r.random_range(1..=5)).collect();
    NetworkSpec::mlp(input, &hidden, r.random_range(2..=4))
}

/// Small conv net: one or two conv+ReLU blocks with random kernel, stride
/// and padding, then global pooling or flatten, then a dense classifier.
pub fn random_conv(r: &mut ChaCha8Rng) -> NetworkSpec {
    loop {
        let c0 = r.random_range(1..=3);
        let (mut h, mut w) = (r.random_range(3..=6), r.random_range(3..=6));
        let input = vec![c0, h, w];
        let mut layers = Vec::new();
        let mut c = c0;
        let mut ok = true;
        for _ in 0..r.random_range(1..=2) {
            let (kernel, stride, pad) = (r.random_range(1..=3), r.random_range(1..=2), r.random_range(0..=1));
            let out_ch = r.random_range(1..=4);
            if kernel > h + 2 * pad || kernel > w + 2 * pad {
                ok = false;
                break;
            }
            layers.push(LayerSpec::Conv2d { in_ch: c, out_ch, kernel, stride, pad });
            layers.push(LayerSpec::Relu);
            h = (h + 2 * pad - kernel) / stride + 1;
            w = (w + 2 * pad - kernel) / stride + 1;
            c = out_ch;
        }
        if !ok {
            continue;
        }
        let classes = r.random_range(2..=3);
        let features = if r.random_bool(0.5) {
            layers.push(LayerSpec::GlobalAvgPool);
            c
        } else {
            layers.push(LayerSpec::Flatten);
            c * h * w
        };
        layers.push(LayerSpec::Dense { in_units: features, out_units: classes });
        let spec = NetworkSpec::new(input, layers, classes);
        spec.validate().expect("generator builds valid specs");
        return spec;
    }
}

pub fn random_spec(r: &mut ChaCha8Rng) -> NetworkSpec {
    if r.random_bool(0.5) {
        random_mlp(r)
    } else {
        random_conv(r)
    }
}

/// Conv stack with random widths, wide enough to prune at p = 0.8.
pub fn random_prunable(r: &mut ChaCha8Rng) -> NetworkSpec {
    if r.random_bool(0.5) {
        let hidden: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(3..=10)).collect();
        NetworkSpec::mlp(r.random_range(2..=6), &hidden, r.random_range(2..=4))
    } else {
        let widths: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(3..=8)).collect();
        NetworkSpec::conv_stack([r.random_range(1..=2), 4, 4], &widths, r.random_range(2..=4))
    }
}

/// Mean cross-entropy of `net` on `(x, labels)`.
pub fn loss(net: &Network, x: &Tensor, labels: &[usize]) -> f64 {
    cross_entropy(&forward(net, x).unwrap().0, labels).unwrap().0
}

fn param_mut(n: &mut Network, layer: usize, which: usize, i: usize) -> &mut f64 {
    let p = &mut n.params[layer];
    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
    &mut t.data_mut()[i]
}

/// Largest relative error between analytic gradients and central
/// differences over every parameter. Values below `floor` in magnitude are
/// compared on an absolute scale.
pub fn max_gradient_error(net: &Network, x: &Tensor, labels: &[usize], eps: f64, floor: f64) -> f64 {
    let (logits, cache) = forward(net, x).unwrap();
    let dlogits = cross_entropy(&logits, labels).unwrap().1;
    let grads = backward(net, &cache, &dlogits).unwrap();
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (l, g) in grads.iter().enumerate() {
        for which in 0..2 {
            let analytic = if which == 0 { g.weight.data() } else { g.bias.data() };
            for (i, &a) in analytic.iter().enumerate() {
                let orig = *param_mut(&mut probe, l, which, i);
                *param_mut(&mut probe, l, which, i) = orig + eps;
                let up = loss(&probe, x, labels);
                *param_mut(&mut probe, l, which, i) = orig - eps;
                let down = loss(&probe, x, labels);
                *param_mut(&mut probe, l, which, i) = orig;
                let numeric = (up - down) / (2.0 * eps);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// `1 − max p` per row, computed independently of the library.
pub fn ref_least_confidence(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| 1.0 - r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn ref_entropy(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| -r.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .collect()
}

/// Top-k by explicit rank counting: rank(i) = #{j beating i}, where j beats
/// i on a higher score or an equal score at a smaller index.
pub fn ref_top_k(indices: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let mut ranked = vec![usize::MAX; n];
    for i in 0..n {
        let rank = (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && indices[j] < indices[i]))
            .count();
        ranked[rank] = indices[i];
    }
    ranked.truncate(k);
    ranked
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Farthest-first traversal recomputing every min-distance from scratch at
/// each step (O(n²k)).
pub fn ref_k_centers(unlabeled: &[Vec<f64>], labeled: &[Vec<f64>], indices: &[usize], k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (pos, u) in unlabeled.iter().enumerate() {
            if chosen.contains(&pos) {
                continue;
            }
            let d = labeled
                .iter()
                .chain(chosen.iter().map(|&c| &unlabeled[c]))
                .map(|c| dist(u, c))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d > bd || (d == bd && indices[pos] < bi),
            };
            if better {
                best = Some((d, indices[pos], pos));
            }
        }
        chosen.push(best.expect("k <= n").2);
    }
    chosen.into_iter().map(|p| indices[p]).collect()
}

/// Random probability rows built by normalising positive draws, with some
/// exact ties and one-hot rows mixed in.
pub fn random_prob_rows(r: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| match r.random_range(0..6) {
            0 => {
                let mut row = vec![0.0; c];
                row[r.random_range(0..c)] = 1.0;
                row
            }
            1 => vec![1.0 / c as f64; c],
            _ => {
                let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            }
        })
        .collect()
}

/// Weight element `(o, i, ..)` offset for a layer whose weight has shape `shape`.
pub fn block(shape: &[usize]) -> usize {
    shape[2..].iter().product()
}

/// Copy of `net` with every coordinate outside the kept sub-blocks zeroed.
pub fn zero_outside(net: &Network, topo: &PrunedTopology) -> Network {
    let mut out = net.clone();
    for (l, p) in out.params.iter_mut().enumerate() {
        let shape = p.weight.shape().to_vec();
        let (o_n, i_n, blk) = (shape[0], shape[1], block(&shape));
        let w = p.weight.data_mut();
        for o in 0..o_n {
            for i in 0..i_n {
                if !(topo.kept_out[l].contains(&o) && topo.kept_in[l].contains(&i)) {
                    w[(o * i_n + i) * blk..(o * i_n + i + 1) * blk].fill(0.0);
                }
            }
        }
        for (o, b) in p.bias.data_mut().iter_mut().enumerate() {
            if !topo.kept_out[l].contains(&o) {
                *b = 0.0;
            }
        }
    }
    out
}

/// Replaces every parameter with a fresh normal draw (a stand-in for training).
pub fn scramble(net: &Network, r: &mut ChaCha8Rng) -> Network {
    let mut out = net.clone();
    for p in &mut out.params {
        for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
            *v = r.sample::<f64, _>(StandardNormal) * 0.5;
        }
    }
    out
}

pub fn net(spec: &NetworkSpec, seed: u64) -> Network {
    init_network(spec, seed).unwrap()
}

/// Checks that every scalar of `fused` equals its `trained` source inside
/// the kept sub-blocks and its `init` source elsewhere, bit for bit.
/// Returns the number of transplanted scalars.
pub fn check_partition(init: &Network, trained: &Network, fused: &Network, topo: &PrunedTopology) -> Result<usize, String> {
    let mut transplanted = 0;
    for (l, (fp, ip)) in fused.params.iter().zip(&init.params).enumerate() {
        let shape = fp.weight.shape();
        let (ins, blk) = (shape[1], block(shape));
        let tp = &trained.params[l];
        let tins = tp.weight.shape()[1];
        let same = |a: f64, b: f64, what: &str| {
            if a.to_bits() == b.to_bits() {
                Ok(())
            } else {
                Err(format!("layer {l}: {what} {a} != {b}"))
            }
        };
        for o in 0..shape[0] {
            let a = topo.kept_out[l].iter().position(|&k| k == o);
            match a {
                Some(a) => {
                    same(fp.bias.data()[o], tp.bias.data()[a], "transplanted bias")?;
                    transplanted += 1;
                }
                None => same(fp.bias.data()[o], ip.bias.data()[o], "retained bias")?,
            }
            for i in 0..ins {
                let b = topo.kept_in[l].iter().position(|&k| k == i);
                for k in 0..blk {
                    let v = fp.weight.data()[(o * ins + i) * blk + k];
                    match (a, b) {
                        (Some(a), Some(b)) => {
                            same(v, tp.weight.data()[(a * tins + b) * blk + k], "transplanted weight")?;
                            transplanted += 1;
                        }
                        _ => same(v, ip.weight.data()[(o * ins + i) * blk + k], "retained weight")?,
                    }
                }
            }
        }
    }
    Ok(transplanted)
}
