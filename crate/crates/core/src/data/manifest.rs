//! Split manifests: which speech and noise sources belong to train,
//! validation and test.
//!
//! ```toml
//! [speech]
//! train = [{ synth = "speech", seed = 1 }, { wav = "clean/a.wav" }]
//! val = [{ synth = "speech", seed = 2 }]
//! test = [{ synth = "speech", seed = 3 }]
//!
//! [noise]
//! train = [{ synth = "pink", seed = 10, seconds = 6.0 }]
//! val = [{ synth = "white", seed = 11 }]
//! test = [{ wav = "noise/hum.wav" }]
//! ```
//!
//! WAV paths are relative to the manifest file. Synthetic sources default
//! to one segment of audio when `seconds` is omitted.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::NoiseKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Speech,
    White,
    Pink,
    Babble,
}

impl SynthKind {
    pub fn noise_kind(self) -> Option<NoiseKind> {
        match self {
            SynthKind::Speech => None,
            SynthKind::White => Some(NoiseKind::White),
            SynthKind::Pink => Some(NoiseKind::Pink),
            SynthKind::Babble => Some(NoiseKind::Babble),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Synth {
        synth: SynthKind,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seconds: Option<f64>,
    },
    Wav {
        wav: PathBuf,
    },
}

impl Source {
    fn key(&self) -> String {
        match self {
            Source::Synth { synth, seed, .. } => format!("synth:{synth:?}:{seed}"),
            Source::Wav { wav } => format!("wav:{}", wav.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<Source>,
    #[serde(default)]
    pub val: Vec<Source>,
    #[serde(default)]
    pub test: Vec<Source>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Source] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<Source> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub speech: Splits,
    pub noise: Splits,
    /// Directory WAV paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Train/val/test counts as close as possible to 60/20/20.
pub fn ratio_counts(n: usize) -> [usize; 3] {
    let train = (n as f64 * 0.6).round() as usize;
    let val = ((n as f64 * 0.2).round() as usize).min(n - train);
    [train, val, n - train - val]
}

impl SplitManifest {
    pub fn from_toml_str(text: &str, root: &Path) -> Result<Self> {
        let mut m: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: "manifest".into(),
            reason: e.to_string(),
        })?;
        m.root = root.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_toml_str(&text, &root).map_err(|e| match e {
            Error::Config { field, reason } => Error::Config {
                field,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Every split non-empty and no source shared between splits.
    pub fn validate(&self) -> Result<()> {
        for (what, splits) in [("speech", &self.speech), ("noise", &self.noise)] {
            let mut seen: HashSet<String> = HashSet::new();
            for split in Split::ALL {
                let sources = splits.get(split);
                if sources.is_empty() {
                    return Err(Error::EmptySplit(format!("{what}.{}", split.name())));
                }
                for s in sources {
                    if let Source::Synth { synth, seconds, .. } = s {
                        if (what == "speech") != (*synth == SynthKind::Speech) {
                            return Err(Error::Config {
                                field: format!("{what}.{}", split.name()),
                                reason: format!("synthetic kind {synth:?} does not belong in the {what} list"),
                            });
                        }
                        if seconds.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                            return Err(Error::Config {
                                field: format!("{what}.{}", split.name()),
                                reason: "seconds must be positive".into(),
                            });
                        }
                    }
                    if !seen.insert(s.key()) {
                        return Err(Error::Config {
                            field: format!("{what}.{}", split.name()),
                            reason: format!("source {} appears more than once", s.key()),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Fully synthetic manifest with `speech` segments per split and
    /// `noise` noise sources per split (kinds rotate white, pink, babble).
    /// Noise sources last `noise_seconds` so each example can crop a
    /// different stretch.
    pub fn synthetic(speech: [usize; 3], noise: [usize; 3], noise_seconds: f64, seed: u64) -> Self {
        let mut m = Self {
            speech: Splits::default(),
            noise: Splits::default(),
            root: PathBuf::from("."),
        };
        let mut next = seed.wrapping_mul(1_000_003);
        let mut fresh = || {
            next = next.wrapping_add(1);
            next
        };
        for (i, split) in Split::ALL.into_iter().enumerate() {
            for _ in 0..speech[i] {
                m.speech.get_mut(split).push(Source::Synth {
                    synth: SynthKind::Speech,
                    seed: fresh(),
                    seconds: None,
                });
            }
            for j in 0..noise[i] {
                let synth = [SynthKind::White, SynthKind::Pink, SynthKind::Babble][j % 3];
                m.noise.get_mut(split).push(Source::Synth {
                    synth,
                    seed: fresh(),
                    seconds: Some(noise_seconds),
                });
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(ratio_counts(300), [180, 60, 60]);
        assert_eq!(ratio_counts(10), [6, 2, 2]);
        assert_eq!(ratio_counts(7), [4, 1, 2]);
        assert_eq!(ratio_counts(1), [1, 0, 0]);
    }

    #[test]
    fn toml_round_trip() {
        let m = SplitManifest::synthetic([3, 1, 1], [2, 1, 1], 4.0, 7);
        let back = SplitManifest::from_toml_str(&m.to_toml_string(), Path::new(".")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parses_mixed_sources() {
        let text = r#"
            [speech]
            train = [{ synth = "speech", seed = 1 }, { wav = "a.wav" }]
            val = [{ synth = "speech", seed = 2 }]
            test = [{ synth = "speech", seed = 3 }]
            [noise]
            train = [{ synth = "pink", seed = 10, seconds = 6.0 }]
            val = [{ synth = "white", seed = 11 }]
            test = [{ synth = "babble", seed = 12 }]
        "#;
        let m = SplitManifest::from_toml_str(text, Path::new("/data")).unwrap();
        assert_eq!(m.speech.train[1], Source::Wav { wav: "a.wav".into() });
    }

    #[test]
    fn shared_source_and_empty_split_are_rejected() {
        let mut m = SplitManifest::synthetic([2, 1, 1], [1, 1, 1], 4.0, 7);
        m.speech.test = vec![m.speech.train[0].clone()];
        assert!(matches!(m.validate(), Err(Error::Config { .. })));
        m.speech.test.clear();
        assert!(matches!(m.validate(), Err(Error::EmptySplit(_))));
    }
}
