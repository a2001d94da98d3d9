//! Paired clean/noisy data: WAV I/O, synthetic sources, segmentation, SNR
//! mixing, split manifests and the per-epoch sampler.

pub mod manifest;
pub mod mix;
pub mod sampler;
pub mod synth;
pub mod wav;

pub use manifest::{ratio_counts, Source, Split, SplitManifest, Splits, SynthKind};
pub use mix::{mix_at_snr, segment, MixExample, ACTIVITY_RMS};
pub use sampler::{derive_seed, Corpus, EpochStream, SnrRange};
pub use synth::{synth_noise, synth_speechlike, NoiseKind};
pub use wav::{load_wav, save_wav, wav_bytes};
