//! Deterministic synthetic speech-like signals and noises.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::AudioSignal;

const PEAK: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];
}

fn peak_normalize(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    x
}

/// Sum of three resonances evaluated at `f` Hz.
fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, &(fc, bw))| {
            let a = [1.0, 0.6, 0.3][i];
            a / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum::<f64>()
        + 0.02
}

/// Raw (not normalized) voiced signal: a harmonic stack with a wandering
/// pitch, per-syllable formants and a syllabic amplitude envelope.
fn voiced(rng: &mut ChaCha8Rng, len: usize, rate: u32) -> Vec<f64> {
    let fs = rate as f64;
    let nyquist_guard = (fs / 2.0).min(5000.0);
    let base_f0 = rng.random_range(95.0..230.0);
    let vibrato_rate = rng.random_range(2.0..5.0);
    let vibrato_depth = rng.random_range(0.03..0.12);
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);

    // Syllables: (start, end, formants). Durations 120-320 ms, gaps 30-120 ms.
    let mut syllables = Vec::new();
    let mut t = rng.random_range(0..(0.05 * fs) as usize);
    while t < len {
        let dur = rng.random_range((0.12 * fs) as usize..(0.32 * fs) as usize);
        let formants = [
            (rng.random_range(300.0..850.0), rng.random_range(60.0..120.0)),
            (rng.random_range(850.0..2300.0), rng.random_range(80.0..160.0)),
            (rng.random_range(2300.0..3400.0), rng.random_range(120.0..220.0)),
        ];
        syllables.push((t, (t + dur).min(len), formants));
        t += dur + rng.random_range((0.03 * fs) as usize..(0.12 * fs) as usize);
    }

    let mut out = vec![0.0; len];
    let max_harmonics = (nyquist_guard / 80.0) as usize;
    let mut phases = vec![0.0f64; max_harmonics];
    for &(start, end, formants) in &syllables {
        let n = end - start;
        let attack = (0.02 * fs) as usize;
        let level = rng.random_range(0.5..1.0);
        for i in 0..n {
            let s = start + i;
            let time = s as f64 / fs;
            let f0 = base_f0 * (1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * time + vibrato_phase).sin());
            // Raised-cosine onset and offset inside each syllable.
            let env = if i < attack {
                0.5 - 0.5 * (PI * i as f64 / attack as f64).cos()
            } else if n - i < attack {
                0.5 - 0.5 * (PI * (n - i) as f64 / attack as f64).cos()
            } else {
                1.0
            };
            let mut v = 0.0;
            for (h, phase) in phases.iter_mut().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f >= nyquist_guard {
                    break;
                }
                *phase = (*phase + 2.0 * PI * f / fs) % (2.0 * PI);
                v += formant_gain(f, &formants) * phase.sin() / (h + 1) as f64;
            }
            out[s] += level * env * v;
        }
    }
    out
}

/// Speech stand-in of `len` samples, peak-normalized to 0.9.
pub fn synth_speechlike(seed: u64, len: usize, rate: u32) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = voiced(&mut rng, len, rate);
    // A faint breath floor keeps pauses from being digitally silent.
    for v in &mut x {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += 1e-3 * n;
    }
    AudioSignal::new(peak_normalize(x), rate).expect("finite synthetic samples")
}

/// Pink noise by Paul Kellet's refined filter over Gaussian white noise.
fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

/// Noise of the given kind, `len` samples, peak-normalized to 0.9. Babble
/// is the sum of six independent speech-like talkers.
pub fn synth_noise(kind: NoiseKind, seed: u64, len: usize, rate: u32) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = match kind {
        NoiseKind::White => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        NoiseKind::Pink => pink(&mut rng, len),
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..6 {
                let talker = synth_speechlike(rng.random(), len, rate);
                acc.iter_mut().zip(&talker.samples).for_each(|(a, b)| *a += b);
            }
            acc
        }
    };
    AudioSignal::new(peak_normalize(x), rate).expect("finite synthetic samples")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_speechlike(3, 4000, 16000), synth_speechlike(3, 4000, 16000));
        assert_ne!(synth_speechlike(3, 4000, 16000), synth_speechlike(4, 4000, 16000));
        assert_eq!(synth_noise(NoiseKind::Pink, 1, 1000, 16000), synth_noise(NoiseKind::Pink, 1, 1000, 16000));
    }

    #[test]
    fn peaks_are_normalized() {
        for kind in NoiseKind::ALL {
            let n = synth_noise(kind, 9, 8000, 16000);
            assert!((n.peak() - PEAK).abs() < 1e-12);
        }
        assert!((synth_speechlike(1, 8000, 16000).peak() - PEAK).abs() < 1e-12);
    }
}
