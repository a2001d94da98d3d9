//! Experiment configuration and the pretrain / distill / evaluate workflows
//! shared by the command line, the examples and the tests.
//!
//! ```toml
//! [models]
//! teacher = "mt1"          # preset name or a full model table
//! student = "ms1"
//! scenario = "t1s1"        # optional; default maps every mismatched axis
//!
//! [audio]
//! segment_len = 16000
//! fft_size = 256
//! hop = 128
//!
//! [data]
//! manifest = "data/manifest.toml"   # relative to this file
//! test_seed = 0
//!
//! [train]
//! batch_size = 8
//! max_epochs = 50
//! seed = 1
//! [train.adam]
//! lr = 3e-3
//!
//! [repeats]
//! count = 5
//! seed_stride = 1000
//! ```
//!
//! Omitted sections and fields take the full-scale defaults: `t1`/`s1`,
//! two-second segments with a 512-point STFT, batch 32, Adam at 1e-3,
//! unit loss weights, SNR drawn from [-5, 20] dB.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Corpus, MixExample, SplitManifest};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::nn::{BottleneckAdapter, ModelConfig, Scenario, UNetModel};
use crate::train::{distill, evaluate, kd_loss, pretrain, HistoryRow, Prepared, TrainConfig, TrainOutcome};
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Custom(ModelConfig),
}

impl ModelChoice {
    pub fn resolve(&self, field: &str) -> Result<ModelConfig> {
        match self {
            ModelChoice::Preset(name) => ModelConfig::preset(name).ok_or_else(|| Error::Config {
                field: field.into(),
                reason: format!("unknown preset `{name}` (expected t1, t2, s1, s2, mt1, mt2, ms1 or ms2)"),
            }),
            ModelChoice::Custom(cfg) => {
                cfg.validate().map_err(|e| Error::Config {
                    field: field.into(),
                    reason: e.to_string(),
                })?;
                Ok(cfg.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    #[serde(default = "default_teacher")]
    pub teacher: ModelChoice,
    #[serde(default = "default_student")]
    pub student: ModelChoice,
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

fn default_teacher() -> ModelChoice {
    ModelChoice::Preset("t1".into())
}
fn default_student() -> ModelChoice {
    ModelChoice::Preset("s1".into())
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            teacher: default_teacher(),
            student: default_student(),
            scenario: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    #[serde(default = "default_segment")]
    pub segment_len: usize,
    #[serde(default = "default_fft")]
    pub fft_size: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
}

fn default_segment() -> usize {
    32_000
}
fn default_fft() -> usize {
    512
}
fn default_hop() -> usize {
    256
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            segment_len: default_segment(),
            fft_size: default_fft(),
            hop: default_hop(),
        }
    }
}

impl AudioConfig {
    /// One-second segments and a 256-point STFT: a 126 x 128 grid.
    pub fn desk() -> Self {
        Self {
            segment_len: 16_000,
            fft_size: 256,
            hop: 128,
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            fft_size: self.fft_size,
            hop: self.hop,
        }
    }

    /// `[T, F]` the models see for one segment.
    pub fn grid(&self) -> [usize; 2] {
        [self.stft().frames_for(self.segment_len), self.stft().model_bins()]
    }

    /// The audio settings whose grid is `input` with a half-overlap STFT.
    pub fn for_grid(input: [usize; 2]) -> Self {
        let [t, f] = input;
        Self {
            segment_len: t.saturating_sub(1) * f,
            fft_size: 2 * f,
            hop: f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft().validate().map_err(|e| Error::Config {
            field: "audio".into(),
            reason: e.to_string(),
        })?;
        if self.segment_len < self.fft_size {
            return Err(Error::Config {
                field: "audio.segment_len".into(),
                reason: format!("{} is shorter than one frame ({})", self.segment_len, self.fft_size),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub test_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_stride")]
    pub seed_stride: u64,
}

fn default_count() -> usize {
    5
}
fn default_stride() -> u64 {
    1000
}

impl Default for RepeatConfig {
    fn default() -> Self {
        Self {
            count: default_count(),
            seed_stride: default_stride(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub audio: AudioConfig,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub repeats: RepeatConfig,
}

impl ExperimentConfig {
    /// Parses and validates; relative paths are resolved against `root`.
    pub fn from_toml_str(text: &str, root: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.to_string(),
        })?;
        if let Some(data) = cfg.data.as_mut() {
            if data.manifest.is_relative() {
                data.manifest = root.join(&data.manifest);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.train.validate()?;
        let grid = self.audio.grid();
        for (field, cfg) in [("models.teacher", self.teacher()?), ("models.student", self.student()?)] {
            if cfg.input != grid {
                return Err(Error::Config {
                    field: field.into(),
                    reason: format!("model `{}` expects a {:?} grid but the audio settings give {grid:?}", cfg.name, cfg.input),
                });
            }
        }
        if self.repeats.count == 0 {
            return Err(Error::Config {
                field: "repeats.count".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn teacher(&self) -> Result<ModelConfig> {
        self.models.teacher.resolve("models.teacher")
    }

    pub fn student(&self) -> Result<ModelConfig> {
        self.models.student.resolve("models.student")
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.data.as_ref().map(|d| d.manifest.as_path()).ok_or_else(|| Error::Config {
            field: "data.manifest".into(),
            reason: "no data manifest configured".into(),
        })
    }

    pub fn test_seed(&self) -> u64 {
        self.data.as_ref().map_or(0, |d| d.test_seed)
    }

    /// Loads the manifest and renders every split.
    pub fn corpus(&self) -> Result<Corpus> {
        let path = self.manifest_path()?;
        if !path.exists() {
            return Err(Error::Config {
                field: "data.manifest".into(),
                reason: format!("{} does not exist", path.display()),
            });
        }
        Corpus::build(&SplitManifest::load(path)?, self.audio.segment_len)
    }
}

/// Initialization seed of the trained model for a run seed.
pub fn model_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 1])
}

/// Initialization seed of the bottleneck adapter for a run seed.
pub fn adapter_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 2])
}

/// Supervised training of a fresh model initialized from `train.seed`.
pub fn run_pretrain(
    config: ModelConfig,
    corpus: &Corpus,
    audio: AudioConfig,
    train: &TrainConfig,
    on_epoch: &mut dyn FnMut(&HistoryRow),
) -> Result<(UNetModel, TrainOutcome)> {
    let mut model = UNetModel::new(config, model_seed(train.seed))?;
    let outcome = pretrain(&mut model, corpus, audio.stft(), train, on_epoch)?;
    Ok((model, outcome))
}

pub struct DistillRun {
    pub student: UNetModel,
    pub adapter: BottleneckAdapter,
    pub outcome: TrainOutcome,
    /// Mean KD loss on the test set before and after training.
    pub kd_initial: f64,
    pub kd_final: f64,
}

/// Builds the adapter for `scenario`, or one mapping every mismatched axis
/// when no scenario is given.
pub fn build_adapter(teacher: &UNetModel, student: &UNetModel, scenario: Option<Scenario>, seed: u64) -> Result<BottleneckAdapter> {
    let (t, s) = (teacher.latent_shape(), student.latent_shape());
    match scenario {
        Some(sc) => BottleneckAdapter::for_scenario(sc, t, s, seed),
        None => BottleneckAdapter::new(t, s, seed),
    }
}

pub fn prepare_all(examples: &[MixExample], audio: AudioConfig) -> Result<Vec<Prepared>> {
    examples.iter().map(|ex| Prepared::new(ex, audio.stft())).collect()
}

/// Distills a fresh student (and adapter) from a frozen `teacher`.
#[allow(clippy::too_many_arguments)]
pub fn run_distill(
    teacher: &UNetModel,
    student_config: ModelConfig,
    scenario: Option<Scenario>,
    corpus: &Corpus,
    audio: AudioConfig,
    train: &TrainConfig,
    test: &[Prepared],
    on_epoch: &mut dyn FnMut(&HistoryRow),
) -> Result<DistillRun> {
    let mut student = UNetModel::new(student_config, model_seed(train.seed))?;
    let mut adapter = build_adapter(teacher, &student, scenario, adapter_seed(train.seed))?;
    let kd_initial = kd_loss(teacher, &student, &adapter, test)?;
    let outcome = distill(teacher, &mut student, &mut adapter, corpus, audio.stft(), train, on_epoch)?;
    let kd_final = kd_loss(teacher, &student, &adapter, test)?;
    Ok(DistillRun {
        student,
        adapter,
        outcome,
        kd_initial,
        kd_final,
    })
}

/// Scores `model` on the frozen test split.
pub fn run_evaluate(model: &UNetModel, test: &[MixExample], audio: AudioConfig) -> Result<MetricsReport> {
    evaluate(model, test, audio.stft())
}
