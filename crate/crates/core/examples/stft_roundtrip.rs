//! STFT of a two-second signal, the model magnitude grid, and the inverse
//! transform back to samples.

use denoise_kd::data::synth_speechlike;
use denoise_kd::dsp::{istft, stft, StftConfig, SAMPLE_RATE};
use denoise_kd::Result;

fn main() -> Result<()> {
    let x = synth_speechlike(3, 32_000, SAMPLE_RATE);
    let spec = stft(&x, StftConfig::default())?;
    let grid = spec.model_magnitude();
    println!("{} samples -> {} x {} magnitude grid", x.len(), grid.frames, grid.bins);

    let y = istft(&spec.magnitude(), &spec, Some(x.len()))?;
    let err: f64 = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = x.samples.iter().map(|a| a * a).sum::<f64>().sqrt();
    println!("round trip relative L2 error {:.3e}", err / norm);
    Ok(())
}
