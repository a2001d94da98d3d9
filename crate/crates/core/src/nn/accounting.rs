//! Parameter and operation counts.
//!
//! Operations are counted for one forward pass over a single input, with
//! one multiply-accumulate as two operations. Only convolutions and
//! transposed convolutions contribute; normalization, activations, bias
//! additions and skip concatenation are ignored.

use super::unet::UNetModel;

/// Trainable scalars, norm scales and biases included.
pub fn count_params(model: &UNetModel) -> usize {
    model.params().numel()
}

/// Multiply-accumulates of one forward pass.
pub fn count_macs(model: &UNetModel) -> u64 {
    let cfg = model.config();
    let walk = model.shape_walk();
    let (kh, kw) = cfg.kernel();
    let k = (kh * kw) as u64;
    let n = cfg.n_blocks();
    let mut macs = 0u64;
    for i in 0..n {
        let [ci, _, _] = walk.encoder[i];
        let [co, ho, wo] = walk.encoder[i + 1];
        macs += (co * ho * wo * ci) as u64 * k;
    }
    for d in 1..=n {
        let m = n - d + 1;
        // A transposed convolution scatters every input element through the
        // full kernel into every output channel.
        let [_, hin, win] = walk.encoder[m];
        let ci = walk.decoder_in_channels[d - 1];
        let co = walk.encoder[m - 1][0];
        macs += (ci * hin * win * co) as u64 * k;
    }
    macs
}

/// Millions of operations per input sample.
pub fn count_mops(model: &UNetModel) -> f64 {
    2.0 * count_macs(model) as f64 / 1e6
}
