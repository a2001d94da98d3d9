//! STFT analysis and overlap-add synthesis.
//!
//! Analysis reflect-pads by `fft_size / 2` on both sides and uses a periodic
//! Hann window, so a 32000-sample signal with a 512-point FFT and hop 256
//! yields 126 frames. Spectrograms keep all `fft_size / 2 + 1` one-sided
//! bins; [`Spectrogram::model_magnitude`] drops the Nyquist bin to give the
//! `F = fft_size / 2` grid that the models consume, and synthesis restores
//! that bin as zero.

pub mod resample;

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LinearOperator;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("audio samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "fft_size must be even and at least 4, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    /// One-sided bin count including DC and Nyquist.
    pub fn full_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Bin count seen by the models (Nyquist dropped).
    pub fn model_bins(&self) -> usize {
        self.fft_size / 2
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn window(&self) -> Vec<f64> {
        hann_periodic(self.fft_size)
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex one-sided STFT, frames x bins, row-major.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
    /// Length of the analysed signal, used as the default synthesis length.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn magnitude(&self) -> MagnitudeSpec {
        MagnitudeSpec {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    /// Magnitude with the Nyquist bin dropped (`T x fft_size/2`).
    pub fn model_magnitude(&self) -> MagnitudeSpec {
        let bins = self.config.model_bins();
        let data = self
            .data
            .chunks(self.bins)
            .flat_map(|row| row[..bins].iter().map(|c| c.norm()))
            .collect();
        MagnitudeSpec {
            frames: self.frames,
            bins,
            data,
        }
    }

    pub fn phase(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.arg()).collect()
    }
}

/// Nonnegative magnitude grid, frames x bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpec {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl MagnitudeSpec {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::DataLength {
                shape: vec![frames, bins],
                expected: frames * bins,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "magnitudes must be nonnegative, found {v}"
            )));
        }
        Ok(Self { frames, bins, data })
    }

    /// The grid as a `[1, T, F]` tensor, the layout the models consume.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.frames, self.bins], self.data.clone()).expect("consistent extents")
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|i| x[pad - i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

pub fn stft(signal: &AudioSignal, config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let n = config.fft_size;
    if signal.len() < n {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            required: n,
        });
    }
    let padded = reflect_pad(&signal.samples, n / 2);
    let frames = config.frames_for(signal.len());
    let window = config.window();
    let bins = config.full_bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * config.hop;
        for (m, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + m] * window[m], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        frames,
        bins,
        data,
        config,
        signal_len: signal.len(),
    })
}

/// Overlap-add synthesis of `magnitude` with the phase of `phase_source`.
/// `magnitude` may carry all one-sided bins or the model grid without Nyquist.
pub fn istft(
    magnitude: &MagnitudeSpec,
    phase_source: &Spectrogram,
    length: Option<usize>,
) -> Result<AudioSignal> {
    let plan = SynthesisPlan::new(phase_source, magnitude.bins, length)?;
    if magnitude.frames != phase_source.frames {
        return Err(Error::ShapeMismatch {
            op: "istft",
            left: vec![magnitude.frames, magnitude.bins],
            right: vec![phase_source.frames, phase_source.bins],
        });
    }
    AudioSignal::new(plan.synthesize(&magnitude.data), SAMPLE_RATE)
}

/// Inverse STFT with frozen phase: a linear map from magnitudes to samples.
///
/// Input layout is `[1, T, B]` (the model mask layout), where `B` is either
/// the full one-sided bin count or the model bin count. The adjoint lets
/// the tape differentiate through synthesis.
pub struct SynthesisPlan {
    config: StftConfig,
    frames: usize,
    mag_bins: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    window: Vec<f64>,
    inv_wss: Vec<f64>,
    length: usize,
    input_shape: [usize; 3],
    output_shape: [usize; 1],
    ifft: Arc<dyn Fft<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl SynthesisPlan {
    pub fn new(phase_source: &Spectrogram, mag_bins: usize, length: Option<usize>) -> Result<Self> {
        let config = phase_source.config;
        let full = config.full_bins();
        if mag_bins != full && mag_bins != config.model_bins() {
            return Err(Error::ShapeMismatch {
                op: "istft",
                left: vec![phase_source.frames, mag_bins],
                right: vec![phase_source.frames, full],
            });
        }
        let n = config.fft_size;
        let pad = n / 2;
        let frames = phase_source.frames;
        let length = length.unwrap_or(phase_source.signal_len);
        let padded_len = (frames - 1) * config.hop + n;
        if length + 2 * pad > padded_len + config.hop {
            return Err(Error::InvalidArgument(format!(
                "synthesis length {length} exceeds what {frames} frames cover"
            )));
        }
        let window = config.window();
        let mut wss = vec![0.0; padded_len.max(length + pad)];
        for t in 0..frames {
            for (m, w) in window.iter().enumerate() {
                wss[t * config.hop + m] += w * w;
            }
        }
        let inv_wss = wss
            .iter()
            .map(|&v| if v > 1e-10 { 1.0 / v } else { 0.0 })
            .collect();
        let mut cos = Vec::with_capacity(frames * mag_bins);
        let mut sin = Vec::with_capacity(frames * mag_bins);
        for t in 0..frames {
            for k in 0..mag_bins {
                let c = phase_source.at(t, k);
                let r = c.norm();
                // Zero bins carry no phase; use 0 rad.
                let (cs, sn) = if r > 0.0 { (c.re / r, c.im / r) } else { (1.0, 0.0) };
                cos.push(cs);
                sin.push(sn);
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        Ok(Self {
            config,
            frames,
            mag_bins,
            cos,
            sin,
            window,
            inv_wss,
            length,
            input_shape: [1, frames, mag_bins],
            output_shape: [length],
            ifft: planner.plan_fft_inverse(n),
            fft: planner.plan_fft_forward(n),
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn synthesize(&self, mag: &[f64]) -> Vec<f64> {
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let pad = n / 2;
        let mut ola = vec![0.0; self.inv_wss.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..self.frames {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for k in 0..self.mag_bins {
                let i = t * self.mag_bins + k;
                let x = Complex64::new(mag[i] * self.cos[i], mag[i] * self.sin[i]);
                buf[k] = x;
                if k > 0 && k < n / 2 {
                    buf[n - k] = x.conj();
                }
            }
            self.ifft.process(&mut buf);
            for m in 0..n {
                ola[t * hop + m] += self.window[m] * buf[m].re / n as f64;
            }
        }
        (0..self.length)
            .map(|i| ola[i + pad] * self.inv_wss[i + pad])
            .collect()
    }

    pub fn synthesize_adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let n = self.config.fft_size;
        let hop = self.config.hop;
        let pad = n / 2;
        let mut g_pad = vec![0.0; self.inv_wss.len()];
        for (i, g) in grad.iter().enumerate() {
            g_pad[i + pad] = g * self.inv_wss[i + pad];
        }
        let mut out = vec![0.0; self.frames * self.mag_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..self.frames {
            for m in 0..n {
                buf[m] = Complex64::new(self.window[m] * g_pad[t * hop + m], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, b) in buf.iter().take(self.mag_bins).enumerate() {
                let i = t * self.mag_bins + k;
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                out[i] = c / n as f64 * (self.cos[i] * b.re + self.sin[i] * b.im);
            }
        }
        out
    }
}

impl LinearOperator for SynthesisPlan {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.synthesize(input)
    }

    fn adjoint(&self, output_grad: &[f64]) -> Vec<f64> {
        self.synthesize_adjoint(output_grad)
    }
}
