//! On-the-fly mixing: each epoch re-draws noise pairings, crops and SNRs
//! from `(seed, split, epoch, index)`. The test split ignores the epoch, so
//! it is the same set every time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Source, Split, SplitManifest};
use super::mix::{mix_at_snr, segment, MixExample};
use super::synth::{synth_noise, synth_speechlike};
use super::wav::load_wav;
use crate::dsp::{AudioSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Epoch key used for the test split.
const TEST_EPOCH: u64 = u64::MAX;

/// SplitMix64 finalizer folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrRange {
    pub min: i32,
    pub max: i32,
}

impl Default for SnrRange {
    fn default() -> Self {
        Self { min: -5, max: 20 }
    }
}

/// Rendered audio for every split: speech cut into segments, noise kept
/// whole for random cropping.
#[derive(Clone, Debug)]
pub struct Corpus {
    segment_len: usize,
    speech: [Vec<AudioSignal>; 3],
    noise: [Vec<AudioSignal>; 3],
}

fn render(manifest: &SplitManifest, s: &Source, default_len: usize) -> Result<AudioSignal> {
    match s {
        Source::Synth { synth, seed, seconds } => {
            let len = seconds.map_or(default_len, |v| (v * SAMPLE_RATE as f64).round() as usize);
            Ok(match synth.noise_kind() {
                None => synth_speechlike(*seed, len, SAMPLE_RATE),
                Some(kind) => synth_noise(kind, *seed, len, SAMPLE_RATE),
            })
        }
        Source::Wav { wav } => load_wav(&manifest.root.join(wav)),
    }
}

impl Corpus {
    pub fn build(manifest: &SplitManifest, segment_len: usize) -> Result<Self> {
        manifest.validate()?;
        let mut speech: [Vec<AudioSignal>; 3] = Default::default();
        let mut noise: [Vec<AudioSignal>; 3] = Default::default();
        for (i, split) in Split::ALL.into_iter().enumerate() {
            for s in manifest.speech.get(split) {
                speech[i].extend(segment(&render(manifest, s, segment_len)?, segment_len));
            }
            for s in manifest.noise.get(split) {
                let n = render(manifest, s, segment_len)?;
                if n.power() <= 0.0 {
                    return Err(Error::ZeroPower { what: "noise source" });
                }
                noise[i].push(n);
            }
            if speech[i].is_empty() {
                return Err(Error::EmptySplit(format!("speech.{} (no active segments)", split.name())));
            }
        }
        Ok(Self {
            segment_len,
            speech,
            noise,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn speech(&self, split: Split) -> &[AudioSignal] {
        &self.speech[split as usize]
    }

    pub fn noise(&self, split: Split) -> &[AudioSignal] {
        &self.noise[split as usize]
    }

    pub fn len(&self, split: Split) -> usize {
        self.speech[split as usize].len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Examples of one epoch, in index order.
    pub fn epoch(&self, split: Split, seed: u64, epoch: u64, snr: SnrRange) -> Result<EpochStream<'_>> {
        let i = split as usize;
        if self.speech[i].is_empty() {
            return Err(Error::EmptySplit(format!("speech.{}", split.name())));
        }
        if self.noise[i].is_empty() {
            return Err(Error::EmptySplit(format!("noise.{}", split.name())));
        }
        if snr.min > snr.max {
            return Err(Error::Config {
                field: "snr".into(),
                reason: format!("min {} exceeds max {}", snr.min, snr.max),
            });
        }
        let epoch = if split == Split::Test { TEST_EPOCH } else { epoch };
        let key = derive_seed(&[seed, split.tag(), epoch]);
        let n = self.speech[i].len();
        let n_noise = self.noise[i].len();
        // Concatenated shuffles of the noise list, cycled as often as needed.
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut noise_order = Vec::with_capacity(n);
        while noise_order.len() < n {
            let mut perm: Vec<usize> = (0..n_noise).collect();
            perm.shuffle(&mut rng);
            noise_order.extend(perm);
        }
        noise_order.truncate(n);
        Ok(EpochStream {
            corpus: self,
            split,
            key,
            snr,
            noise_order,
            next: 0,
        })
    }

    /// The frozen test set.
    pub fn test_set(&self, seed: u64, snr: SnrRange) -> Result<Vec<MixExample>> {
        self.epoch(Split::Test, seed, 0, snr)?.collect()
    }
}

pub struct EpochStream<'a> {
    corpus: &'a Corpus,
    split: Split,
    key: u64,
    snr: SnrRange,
    noise_order: Vec<usize>,
    next: usize,
}

impl EpochStream<'_> {
    /// True when some noise source is used for more than one example.
    pub fn oversampled(&self) -> bool {
        self.noise_order.len() > self.corpus.noise(self.split).len()
    }

    pub fn noise_order(&self) -> &[usize] {
        &self.noise_order
    }

    fn example(&self, index: usize) -> Result<MixExample> {
        let clean = &self.corpus.speech(self.split)[index];
        let noise = &self.corpus.noise(self.split)[self.noise_order[index]];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.key, index as u64]));
        let snr = rng.random_range(self.snr.min..=self.snr.max);
        let len = clean.len();
        // Noise shorter than a segment is looped.
        let offset = if noise.len() > len { rng.random_range(0..=noise.len() - len) } else { 0 };
        let crop: Vec<f64> = (0..len).map(|k| noise.samples[(offset + k) % noise.len()]).collect();
        mix_at_snr(clean, &AudioSignal::new(crop, noise.sample_rate)?, snr)
    }
}

impl Iterator for EpochStream<'_> {
    type Item = Result<MixExample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.noise_order.len() {
            return None;
        }
        let ex = self.example(self.next);
        self.next += 1;
        Some(ex)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.noise_order.len() - self.next;
        (rest, Some(rest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        let m = SplitManifest::synthetic([4, 2, 2], [2, 1, 1], 1.0, 3);
        Corpus::build(&m, 4000).unwrap()
    }

    #[test]
    fn seeding_contract() {
        let c = corpus();
        let snr = SnrRange::default();
        let a: Vec<_> = c.epoch(Split::Train, 1, 0, snr).unwrap().map(Result::unwrap).collect();
        let b: Vec<_> = c.epoch(Split::Train, 1, 0, snr).unwrap().map(Result::unwrap).collect();
        let other: Vec<_> = c.epoch(Split::Train, 1, 1, snr).unwrap().map(Result::unwrap).collect();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_eq!(c.test_set(1, snr).unwrap(), c.epoch(Split::Test, 1, 9, snr).unwrap().map(Result::unwrap).collect::<Vec<_>>());
    }

    #[test]
    fn oversampling_when_noise_is_scarce() {
        let c = corpus();
        let s = c.epoch(Split::Train, 0, 0, SnrRange::default()).unwrap();
        assert!(s.oversampled());
        assert_eq!(s.noise_order().len(), 4);
        let mut counts = [0; 2];
        s.noise_order().iter().for_each(|&i| counts[i] += 1);
        assert_eq!(counts, [2, 2]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
    }
}
