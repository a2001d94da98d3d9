//! Classic short-time objective intelligibility.
//!
//! Both signals are resampled to 10 kHz, frames where the clean signal is
//! more than 40 dB below its loudest frame are dropped, and the remaining
//! audio is analysed with a 256-sample Hann window (hop 128, 512-point FFT)
//! into 15 third-octave bands starting at 150 Hz. Envelopes over 30-frame
//! segments are normalized, clipped at a -15 dB signal-to-distortion bound
//! and correlated; the score is the mean correlation.

use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::resample::resample;
use crate::dsp::AudioSignal;
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Symmetric Hann of length `n` without the zero endpoints.
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn window() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| hann_inner(FRAME))
}

/// `[lo, hi)` FFT-bin ranges of the third-octave bands.
fn band_edges() -> &'static [(usize, usize)] {
    static B: OnceLock<Vec<(usize, usize)>> = OnceLock::new();
    B.get_or_init(|| {
        let freqs: Vec<f64> = (0..=NFFT / 2).map(|i| i as f64 * STOI_RATE as f64 / NFFT as f64).collect();
        let nearest = |f: f64| {
            let mut best = 0;
            for (i, &fi) in freqs.iter().enumerate() {
                if (fi - f).powi(2) < (freqs[best] - f).powi(2) {
                    best = i;
                }
            }
            best
        };
        (0..BANDS)
            .map(|k| {
                let k = k as f64;
                let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
                let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
                (nearest(lo), nearest(hi))
            })
            .collect()
    })
}

/// Start offsets of analysis frames; the final frame that would end exactly
/// at the signal end is not used.
fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = window();
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * HOP + FRAME;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Third-octave band envelopes, `[band][frame]`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for s in frame_starts(x.len()) {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i].re = w[i] * x[s + i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in band_edges().iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn center_and_normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let n = norm(v) + EPS;
    v.iter_mut().for_each(|a| *a /= n);
}

/// Intelligibility score of `processed` against `clean`, roughly in `[0, 1]`.
pub fn stoi(clean: &AudioSignal, processed: &AudioSignal) -> Result<f64> {
    if clean.len() != processed.len() || clean.sample_rate != processed.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "stoi needs equal-length signals at one rate, got {} @ {} Hz and {} @ {} Hz",
            clean.len(),
            clean.sample_rate,
            processed.len(),
            processed.sample_rate
        )));
    }
    let (x, y) = if clean.sample_rate == STOI_RATE {
        (clean.samples.clone(), processed.samples.clone())
    } else {
        (
            resample(&clean.samples, clean.sample_rate, STOI_RATE),
            resample(&processed.samples, processed.sample_rate, STOI_RATE),
        )
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let xb = band_envelopes(&x);
    let yb = band_envelopes(&y);
    let frames = xb[0].len();
    if frames < SEGMENT {
        // Express the requirement in samples of the caller's rate.
        let need_10k = (SEGMENT - 1) * HOP + FRAME + 1;
        let required = (need_10k as f64 * clean.sample_rate as f64 / STOI_RATE as f64).ceil() as usize;
        return Err(Error::SignalTooShort {
            len: clean.len(),
            required,
        });
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT + 1;
    for m in SEGMENT..=frames {
        for b in 0..BANDS {
            let mut xs = xb[b][m - SEGMENT..m].to_vec();
            let ys = &yb[b][m - SEGMENT..m];
            let scale = norm(&xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys.iter().zip(&xs).map(|(&yv, &xv)| (yv * scale).min(xv * clip)).collect();
            center_and_normalize(&mut yp);
            center_and_normalize(&mut xs);
            total += yp.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (BANDS * segments) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_match_reference_table() {
        let expected = [
            (7, 9), (9, 11), (11, 14), (14, 17), (17, 22), (22, 27), (27, 34), (34, 43),
            (43, 55), (55, 69), (69, 87), (87, 109), (109, 138), (138, 174), (174, 219),
        ];
        assert_eq!(band_edges(), expected.as_slice());
    }

    #[test]
    fn short_signal_is_rejected() {
        let x = AudioSignal::new((0..2000).map(|i| (i as f64 * 0.1).sin()).collect(), STOI_RATE).unwrap();
        assert!(matches!(stoi(&x, &x), Err(Error::SignalTooShort { .. })));
    }
}
