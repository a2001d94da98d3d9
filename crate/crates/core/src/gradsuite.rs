//! The finite-difference gradient suite: every differentiable building
//! block, then a miniature end-to-end distillation step.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{stft, AudioSignal, StftConfig, SynthesisPlan, SAMPLE_RATE};
use crate::error::Result;
use crate::losses::{cosine_distance, joint_loss, si_snr_loss, LossWeights};
use crate::nn::{BottleneckAdapter, LatentShape, ModelConfig, UNetModel};
use crate::tensor::conv::{conv_out_extent, conv_transpose_out_extent, ConvGeometry};
use crate::tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::tensor::{Tape, Tensor};

/// Tolerance for the per-operation checks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for losses and the end-to-end check.
pub const LOSS_TOLERANCE: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive shape")
}

fn opts(tolerance: f64) -> GradCheckOptions {
    GradCheckOptions {
        tolerance,
        ..GradCheckOptions::default()
    }
}

/// Runs every check with inputs drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    for (stride, pad) in [((1, 1), (1, 1)), ((1, 2), (1, 1)), ((2, 2), (0, 1))] {
        let geo = ConvGeometry::new(stride, pad);
        let (oh, ow) = (conv_out_extent(6, 3, stride.0, pad.0)?, conv_out_extent(7, 3, stride.1, pad.1)?);
        let (x, k, b) = (random(&[2, 6, 7], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng));
        let r = random(&[3, oh, ow], &mut rng);
        let name = format!("conv2d stride {stride:?} pad {pad:?}");
        reports.push(check_gradients(&name, &[x, k, b], opts(OP_TOLERANCE), |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), geo)?;
            let rv = t.constant(r.clone());
            t.dot(y, rv)
        })?);

        let out_pad = (
            6 - conv_transpose_out_extent(oh, 3, stride.0, pad.0, 0)?,
            7 - conv_transpose_out_extent(ow, 3, stride.1, pad.1, 0)?,
        );
        let (y, k, b) = (random(&[3, oh, ow], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[2], &mut rng));
        let r = random(&[2, 6, 7], &mut rng);
        let name = format!("conv2d_transpose stride {stride:?} pad {pad:?}");
        reports.push(check_gradients(&name, &[y, k, b], opts(OP_TOLERANCE), |t, v| {
            let out = t.conv2d_transpose(v[0], v[1], Some(v[2]), geo, out_pad)?;
            let rv = t.constant(r.clone());
            t.dot(out, rv)
        })?);
    }

    let (x, g, b) = (random(&[2, 3, 4], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng));
    let r = random(&[2, 3, 4], &mut rng);
    reports.push(check_gradients("instance_norm", &[x.clone(), g, b], opts(OP_TOLERANCE), |t, v| {
        let y = t.instance_norm(v[0], v[1], v[2], 1e-5)?;
        let rv = t.constant(r.clone());
        t.dot(y, rv)
    })?);
    reports.push(check_gradients("leaky_relu + sigmoid", &[x], opts(OP_TOLERANCE), |t, v| {
        let a = t.leaky_relu(v[0], 0.2);
        let s = t.sigmoid(a);
        let rv = t.constant(r.clone());
        t.dot(s, rv)
    })?);

    let (a, b) = (random(&[3, 4, 2], &mut rng), random(&[3, 4, 2], &mut rng));
    reports.push(check_gradients("cosine_distance", &[a, b], opts(LOSS_TOLERANCE), |t, v| {
        cosine_distance(t, v[0], v[1])
    })?);

    let target = random(&[64], &mut rng);
    let estimate: Vec<f64> = target.data().iter().map(|s| 0.7 * s + 0.3 * rng.random_range(-1.0..1.0)).collect();
    // The target is data: only the estimate is perturbed.
    reports.push(check_gradients("si_snr_loss", &[Tensor::from_vec(estimate)], opts(LOSS_TOLERANCE), |t, v| {
        let x = t.constant(target.clone());
        si_snr_loss(t, x, v[0])
    })?);

    reports.push(end_to_end(&mut rng)?);
    Ok(reports)
}

/// Student UNet and adapter parameters through masking, noisy-phase
/// synthesis and the joint loss, with a fixed teacher latent.
fn end_to_end(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let stft_cfg = StftConfig { fft_size: 16, hop: 8 };
    let len = 56;
    let noisy = AudioSignal::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), SAMPLE_RATE)?;
    let clean = Tensor::from_vec(noisy.samples.iter().map(|s| 0.8 * s + rng.random_range(-0.05..0.05)).collect());
    let spec = stft(&noisy, stft_cfg)?;
    let mag = spec.model_magnitude();
    let plan = Arc::new(SynthesisPlan::new(&spec, mag.bins, Some(len))?);
    let input = mag.to_tensor();
    let (t, f) = (input.shape()[1], input.shape()[2]);

    let cfg = ModelConfig::with_derived_padding("grad", [t, f], [3, 3], &[3, 4], &[[1, 2], [2, 2]], [t / 2, f / 4])?;
    let student = UNetModel::new(cfg, rng.random())?;
    let teacher_shape = LatentShape::new(5, t / 2, f / 4 + 1);
    let adapter = BottleneckAdapter::new(teacher_shape, student.latent_shape(), rng.random())?;
    let teacher_latent = random(&teacher_shape.as_array(), rng);
    let weights = LossWeights {
        lambda_kd: 0.7,
        lambda_out: 1.0,
    };

    let n_student = student.params().len();
    let inputs: Vec<Tensor> = student
        .params()
        .entries()
        .iter()
        .chain(adapter.params().entries())
        .map(|e| e.tensor.clone())
        .collect();
    check_gradients("unet + adapter + joint loss", &inputs, opts(LOSS_TOLERANCE), |tape: &mut Tape, v| {
        let x = tape.constant(input.clone());
        let tl = tape.constant(teacher_latent.clone());
        let h_b = adapter.forward(tape, &v[n_student..], tl)?;
        let out = student.forward(tape, &v[..n_student], x)?;
        let kd = cosine_distance(tape, h_b, out.latent)?;
        let masked = tape.mul(out.mask, x)?;
        let wave = tape.linear(masked, plan.clone())?;
        let c = tape.constant(clean.clone());
        let l_out = si_snr_loss(tape, c, wave)?;
        joint_loss(tape, kd, l_out, weights)
    })
}
