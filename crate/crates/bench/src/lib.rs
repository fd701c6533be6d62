//! Fixtures shared by the benchmarks.

use prunefuse_core::data::gen_blobs;
use prunefuse_core::nn::{init_network, Network, NetworkSpec};
use prunefuse_core::Tensor;

/// Two 3×3 conv blocks over 1×8×8 inputs, 10 classes.
pub fn conv_net(width: usize, seed: u64) -> Network {
    init_network(&NetworkSpec::conv_stack([1, 8, 8], &[width, width], 10), seed).expect("fixed spec is valid")
}

/// `n` samples shaped `1×8×8`.
pub fn image_batch(n: usize, seed: u64) -> Tensor {
    gen_blobs(n, 10, 64, 1.0, seed)
        .and_then(|d| d.with_sample_shape(&[1, 8, 8]))
        .expect("fixed blob parameters are valid")
        .inputs
}

/// `n` random embeddings of width `dim`.
pub fn embeddings(n: usize, dim: usize, seed: u64) -> Tensor {
    gen_blobs(n, 4, dim, 1.0, seed).expect("fixed blob parameters are valid").inputs
}
