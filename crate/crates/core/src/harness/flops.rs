//! FLOPs ledger rules.

use crate::nn::{forward_flops, NetworkSpec, NnError};

/// Forward plus backward, with backward costed at twice the forward pass.
pub const TRAIN_PASSES_PER_SAMPLE: u64 = 3;

/// `forward_flops(spec) × passes × n_samples × epochs`.
pub fn training_flops_with(spec: &NetworkSpec, n_samples: usize, epochs: usize, passes: u64) -> Result<u64, NnError> {
    Ok(forward_flops(spec, &spec.input_shape)? * passes * n_samples as u64 * epochs as u64)
}

pub fn training_flops(spec: &NetworkSpec, n_samples: usize, epochs: usize) -> Result<u64, NnError> {
    training_flops_with(spec, n_samples, epochs, TRAIN_PASSES_PER_SAMPLE)
}

/// One forward pass per scored candidate.
pub fn inference_flops(spec: &NetworkSpec, n_samples: usize) -> Result<u64, NnError> {
    Ok(forward_flops(spec, &spec.input_shape)? * n_samples as u64)
}
