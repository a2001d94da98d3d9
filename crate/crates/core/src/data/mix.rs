use crate::dsp::AudioSignal;
use crate::error::{Error, Result};

/// Segments whose RMS falls below this (full scale 1.0) count as inactive.
pub const ACTIVITY_RMS: f64 = 1e-4;

/// One training or test pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MixExample {
    pub clean: AudioSignal,
    pub noisy: AudioSignal,
    pub snr_db: i32,
}

/// Non-overlapping segments of exactly `segment_len` samples; the tail and
/// inactive segments are dropped.
pub fn segment(signal: &AudioSignal, segment_len: usize) -> Vec<AudioSignal> {
    if segment_len == 0 {
        return Vec::new();
    }
    signal
        .samples
        .chunks_exact(segment_len)
        .map(|c| AudioSignal {
            samples: c.to_vec(),
            sample_rate: signal.sample_rate,
        })
        .filter(|s| s.rms() >= ACTIVITY_RMS)
        .collect()
}

/// Adds `noise` to `clean` at `snr_db`, then scales both by the same factor
/// if the mixture would exceed unit peak amplitude.
pub fn mix_at_snr(clean: &AudioSignal, noise: &AudioSignal, snr_db: i32) -> Result<MixExample> {
    if clean.len() != noise.len() {
        return Err(Error::ShapeMismatch {
            op: "mix",
            left: vec![clean.len()],
            right: vec![noise.len()],
        });
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "mix: sample rates differ ({} vs {})",
            clean.sample_rate, noise.sample_rate
        )));
    }
    let (pc, pn) = (clean.power(), noise.power());
    if pc <= 0.0 {
        return Err(Error::ZeroPower { what: "clean signal" });
    }
    if pn <= 0.0 {
        return Err(Error::ZeroPower { what: "noise" });
    }
    let gain = (pc / (pn * 10f64.powf(snr_db as f64 / 10.0))).sqrt();
    let mut noisy: Vec<f64> = clean.samples.iter().zip(&noise.samples).map(|(c, n)| c + gain * n).collect();
    let mut clean = clean.samples.clone();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        noisy.iter_mut().for_each(|v| *v /= peak);
        clean.iter_mut().for_each(|v| *v /= peak);
    }
    let rate = noise.sample_rate;
    Ok(MixExample {
        clean: AudioSignal::new(clean, rate)?,
        noisy: AudioSignal::new(noisy, rate)?,
        snr_db,
    })
}
