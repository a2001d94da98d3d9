//! The `denoise-kd` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input
//! error. Every command writes its outputs and a `run.json` manifest under
//! `--out`; nothing in the outputs depends on wall-clock time or on the
//! output path, so equal flags give byte-identical directories.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::{derive_seed, ratio_counts, synth_noise, wav_bytes, synth_speechlike, NoiseKind, Source, Split, SplitManifest, Splits};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::experiment::{build_adapter, model_seed, prepare_all, run_distill, run_evaluate, run_pretrain, AudioConfig, ExperimentConfig};
use crate::gradsuite::run_suite;
use crate::metrics::MetricsReport;
use crate::nn::{Architecture, Checkpoint, Scenario, UNetModel};
use crate::train::{repeat_seeds, summarize, HistoryRow, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "denoise-kd", version, about = "UNet speech denoising with bottleneck knowledge distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Supervised training of the configured teacher (or student).
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Which configured model to train.
        #[arg(long, value_enum, default_value = "teacher")]
        role: Role,
    },
    /// Trains the configured student and an adapter against a frozen teacher.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long = "lambda-kd")]
        lambda_kd: Option<f64>,
        #[arg(long = "lambda-out")]
        lambda_out: Option<f64>,
        /// Independent runs with seeds `seed + i * seed_stride`.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long = "seed-stride")]
        seed_stride: Option<u64>,
    },
    /// Scores a model checkpoint on the test split of a manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Audio settings; inferred from the checkpoint when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the frozen test mixtures.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic WAV corpus and its split manifest.
    Synthdata {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of speech clips.
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Length of each speech clip in seconds.
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
    },
}

/// An error together with the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

fn setup<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|error| Failure { code: 2, error })
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|error| Failure { code: 1, error })
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Pretrain { config, out, seed, role } => cmd_pretrain(&config, &out, seed, role),
        Command::Distill {
            config,
            teacher,
            out,
            seed,
            scenario,
            lambda_kd,
            lambda_out,
            repeats,
            seed_stride,
        } => cmd_distill(DistillArgs {
            config,
            teacher,
            out,
            seed,
            scenario,
            lambda_kd,
            lambda_out,
            repeats,
            seed_stride,
        }),
        Command::Eval { model, test, out, config, seed } => cmd_eval(&model, &test, &out, config.as_deref(), seed),
        Command::Gradcheck { seed, out } => cmd_gradcheck(seed, out.as_deref()),
        Command::Synthdata { out, seed, count, seconds } => cmd_synthdata(&out, seed, count, seconds),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Output directory plus the record of what was written into it.
struct RunDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(self, command: &str, details: serde_json::Value) -> Result<()> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "details": details,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join("run.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn progress(tag: &str) -> impl FnMut(&HistoryRow) + '_ {
    move |r| {
        eprintln!(
            "[{tag}] epoch {:>3}  l_kd {:.5}  l_out {:.4}  l_tot {:.4}  val {:.4}  best {:.4}",
            r.epoch, r.l_kd, r.l_out, r.l_tot, r.val_loss, r.best_val
        )
    }
}

fn provenance(role: &str, seed: u64, audio: AudioConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("role".to_string(), role.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("audio".to_string(), serde_json::to_string(&audio).expect("audio serializes")),
    ])
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn cmd_pretrain(config: &Path, out: &Path, seed: Option<u64>, role: Role) -> std::result::Result<(), Failure> {
    let cfg = setup(load_config(config, seed))?;
    let model_cfg = setup(match role {
        Role::Teacher => cfg.teacher(),
        Role::Student => cfg.student(),
    })?;
    let corpus = setup(cfg.corpus())?;
    let test = setup(corpus.test_set(cfg.test_seed(), cfg.train.snr))?;
    let mut dir = setup(RunDir::create(out))?;
    let (model, outcome) = runtime(run_pretrain(model_cfg, &corpus, cfg.audio, &cfg.train, &mut progress("pretrain")))?;
    let report = runtime(run_evaluate(&model, &test, cfg.audio))?;
    let ckpt = Checkpoint::from_unet(&model, provenance("pretrain", cfg.train.seed, cfg.audio));
    runtime((|| {
        dir.write("model.ckpt", &ckpt.to_bytes()?)?;
        dir.write("history.csv", outcome.history.to_csv().as_bytes())?;
        dir.write("metrics.csv", report.to_csv().as_bytes())?;
        dir.write("config.toml", cfg.to_toml_string().as_bytes())
    })())?;
    let (enh, noisy) = (report.aggregate(), report.baseline());
    println!(
        "{}: best epoch {} | test SI-SDR {:.3} dB (noisy {:.3}) SDR {:.3} STOI {:.4}",
        model.config().name, outcome.best_epoch, enh.si_sdr_db.mean, noisy.si_sdr_db.mean, enh.sdr_db.mean, enh.stoi.mean
    );
    runtime(dir.finish(
        "pretrain",
        json!({
            "model": model.config().name,
            "seed": cfg.train.seed,
            "init_seed": model_seed(cfg.train.seed),
            "best_epoch": outcome.best_epoch,
            "epochs_run": outcome.history.rows.len(),
            "params_digest": model.params().digest(),
        }),
    ))
}

struct DistillArgs {
    config: PathBuf,
    teacher: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    scenario: Option<Scenario>,
    lambda_kd: Option<f64>,
    lambda_out: Option<f64>,
    repeats: usize,
    seed_stride: Option<u64>,
}

fn load_teacher(path: &Path, cfg: &ExperimentConfig) -> Result<UNetModel> {
    let ckpt = Checkpoint::load(path)?;
    if !matches!(ckpt.architecture, Architecture::Unet(_)) {
        return Err(Error::Checkpoint(format!("{} does not hold a UNet model", path.display())));
    }
    let teacher = ckpt.into_unet()?;
    let grid = cfg.audio.grid();
    if teacher.config().input != grid {
        return Err(Error::Config {
            field: "teacher".into(),
            reason: format!(
                "checkpoint expects a {:?} grid but the audio settings give {grid:?}",
                teacher.config().input
            ),
        });
    }
    Ok(teacher)
}

fn cmd_distill(a: DistillArgs) -> std::result::Result<(), Failure> {
    let mut cfg = setup(load_config(&a.config, a.seed))?;
    if let Some(v) = a.lambda_kd {
        cfg.train.weights.lambda_kd = v;
    }
    if let Some(v) = a.lambda_out {
        cfg.train.weights.lambda_out = v;
    }
    let scenario = a.scenario.or(cfg.models.scenario);
    if a.repeats == 0 {
        return Err(Failure {
            code: 2,
            error: Error::Config {
                field: "repeats".into(),
                reason: "must be at least 1".into(),
            },
        });
    }
    setup(cfg.validate())?;
    let teacher = setup(load_teacher(&a.teacher, &cfg))?;
    let student_cfg = setup(cfg.student())?;
    // Reject incompatible scenarios before any data is rendered.
    let probe = setup(UNetModel::new(student_cfg.clone(), 0))?;
    setup(build_adapter(&teacher, &probe, scenario, 0))?;
    let corpus = setup(cfg.corpus())?;
    let test = setup(corpus.test_set(cfg.test_seed(), cfg.train.snr))?;
    let prepared = runtime(prepare_all(&test, cfg.audio))?;
    let teacher_digest = teacher.params().digest();
    let stride = a.seed_stride.unwrap_or(cfg.repeats.seed_stride);
    let seeds = repeat_seeds(a.repeats, cfg.train.seed, stride);
    let mut root = setup(RunDir::create(&a.out))?;
    let mut runs = Vec::new();
    let mut run_details = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let train = TrainConfig { seed, ..cfg.train };
        let tag = format!("distill {}/{}", i + 1, seeds.len());
        let run = runtime(run_distill(&teacher, student_cfg.clone(), scenario, &corpus, cfg.audio, &train, &prepared, &mut progress(&tag)))?;
        if teacher.params().digest() != teacher_digest {
            return Err(Failure {
                code: 1,
                error: Error::Checkpoint("teacher parameters changed during distillation".into()),
            });
        }
        let report = runtime(run_evaluate(&run.student, &test, cfg.audio))?;
        let sub = if seeds.len() == 1 { String::new() } else { format!("run{i}/") };
        let prov = provenance("distill", seed, cfg.audio);
        runtime((|| {
            root.write(&format!("{sub}student.ckpt"), &Checkpoint::from_unet(&run.student, prov.clone()).to_bytes()?)?;
            root.write(&format!("{sub}adapter.ckpt"), &Checkpoint::from_bottleneck(&run.adapter, prov.clone()).to_bytes()?)?;
            root.write(&format!("{sub}history.csv"), run.outcome.history.to_csv().as_bytes())?;
            root.write(&format!("{sub}metrics.csv"), report.to_csv().as_bytes())
        })())?;
        let enh = report.aggregate();
        println!(
            "run {i} seed {seed}: best epoch {} | L_kd {:.5} -> {:.5} | test SI-SDR {:.3} dB SDR {:.3} STOI {:.4}",
            run.outcome.best_epoch, run.kd_initial, run.kd_final, enh.si_sdr_db.mean, enh.sdr_db.mean, enh.stoi.mean
        );
        run_details.push(json!({
            "seed": seed,
            "best_epoch": run.outcome.best_epoch,
            "epochs_run": run.outcome.history.rows.len(),
            "kd_initial": run.kd_initial,
            "kd_final": run.kd_final,
            "adapter_maps": run.adapter.maps().iter().map(|m| format!("{}:{}->{}", m.axis, m.from, m.to)).collect::<Vec<_>>(),
        }));
        runs.push(report.aggregate());
    }
    let label = scenario.map_or_else(|| "custom".to_string(), |s| s.name().to_string());
    let summary = summarize(seeds.clone(), runs);
    let table = summary.table(&label);
    print!("{table}");
    runtime((|| {
        root.write("summary.txt", table.as_bytes())?;
        root.write(
            "summary.json",
            (serde_json::to_string_pretty(&summary.to_json()).expect("summary serializes") + "\n").as_bytes(),
        )?;
        root.write("config.toml", cfg.to_toml_string().as_bytes())
    })())?;
    runtime(root.finish(
        "distill",
        json!({
            "teacher": teacher.config().name,
            "teacher_digest": teacher_digest,
            "student": student_cfg.name,
            "scenario": label,
            "lambda_kd": cfg.train.weights.lambda_kd,
            "lambda_out": cfg.train.weights.lambda_out,
            "runs": run_details,
        }),
    ))
}

fn cmd_eval(model: &Path, test: &Path, out: &Path, config: Option<&Path>, seed: u64) -> std::result::Result<(), Failure> {
    let ckpt = setup(Checkpoint::load(model))?;
    let audio_from_ckpt = ckpt.provenance.get("audio").and_then(|s| serde_json::from_str::<AudioConfig>(s).ok());
    let model = setup(ckpt.into_unet())?;
    let (audio, snr) = match config {
        Some(p) => {
            let cfg = setup(ExperimentConfig::load(p))?;
            (cfg.audio, cfg.train.snr)
        }
        None => (
            audio_from_ckpt.unwrap_or_else(|| AudioConfig::for_grid(model.config().input)),
            TrainConfig::default().snr,
        ),
    };
    if audio.grid() != model.config().input {
        return Err(Failure {
            code: 2,
            error: Error::Config {
                field: "audio".into(),
                reason: format!("model expects a {:?} grid, audio settings give {:?}", model.config().input, audio.grid()),
            },
        });
    }
    if !test.exists() {
        return Err(Failure {
            code: 2,
            error: Error::Config {
                field: "test".into(),
                reason: format!("{} does not exist", test.display()),
            },
        });
    }
    let manifest = setup(SplitManifest::load(test))?;
    let corpus = setup(crate::data::Corpus::build(&manifest, audio.segment_len))?;
    let examples = setup(corpus.test_set(seed, snr))?;
    let mut dir = setup(RunDir::create(out))?;
    let report: MetricsReport = runtime(run_evaluate(&model, &examples, audio))?;
    runtime(dir.write("metrics.csv", report.to_csv().as_bytes()))?;
    let (enh, noisy) = (report.aggregate(), report.baseline());
    println!("{:<8} {:>10} {:>10} {:>10}", "", "SDR", "SI-SDR", "STOI");
    println!("{:<8} {:>10.4} {:>10.4} {:>10.4}", "model", enh.sdr_db.mean, enh.si_sdr_db.mean, enh.stoi.mean);
    println!("{:<8} {:>10.4} {:>10.4} {:>10.4}", "noisy", noisy.sdr_db.mean, noisy.si_sdr_db.mean, noisy.stoi.mean);
    runtime(dir.finish(
        "eval",
        json!({
            "model": model.config().name,
            "params_digest": model.params().digest(),
            "test_seed": seed,
            "examples": report.examples.len(),
            "audio": audio,
        }),
    ))
}

fn cmd_gradcheck(seed: u64, out: Option<&Path>) -> std::result::Result<(), Failure> {
    let reports = runtime(run_suite(seed))?;
    let mut table = format!("{:<40} {:>9} {:>12} {:>10} {}\n", "check", "elements", "max rel err", "tolerance", "result");
    for r in &reports {
        let _ = writeln!(
            table,
            "{:<40} {:>9} {:>12.3e} {:>10.0e} {}",
            r.name,
            r.elements,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    print!("{table}");
    if let Some(out) = out {
        let mut dir = setup(RunDir::create(out))?;
        runtime(dir.write("gradcheck.txt", table.as_bytes()))?;
        runtime(dir.finish("gradcheck", json!({ "seed": seed, "checks": reports.len() })))?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            error: Error::InvalidArgument(format!("gradient check failed for: {}", failed.join(", "))),
        })
    }
}

fn cmd_synthdata(out: &Path, seed: u64, count: usize, seconds: f64) -> std::result::Result<(), Failure> {
    if count < 3 {
        return Err(Failure {
            code: 2,
            error: Error::Config {
                field: "count".into(),
                reason: format!("need at least 3 clips to fill three splits, got {count}"),
            },
        });
    }
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Failure {
            code: 2,
            error: Error::Config {
                field: "seconds".into(),
                reason: format!("must be positive, got {seconds}"),
            },
        });
    }
    let mut dir = setup(RunDir::create(out))?;
    let speech_len = (seconds * SAMPLE_RATE as f64).round() as usize;
    let noise_len = 10 * SAMPLE_RATE as usize;
    let speech_counts = ratio_counts(count);
    let noise_counts = ratio_counts((count / 10).max(5));
    let mut manifest = SplitManifest {
        speech: Splits::default(),
        noise: Splits::default(),
        root: out.to_path_buf(),
    };
    let (mut si, mut ni) = (0u64, 0u64);
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let mut speech = Vec::new();
        for _ in 0..speech_counts[k] {
            let name = format!("clean/{}_{si:04}.wav", split.name());
            let signal = synth_speechlike(derive_seed(&[seed, 0, si]), speech_len, SAMPLE_RATE);
            runtime(wav_bytes(&signal).and_then(|b| dir.write(&name, &b)))?;
            speech.push(Source::Wav { wav: name.into() });
            si += 1;
        }
        let mut noise = Vec::new();
        for j in 0..noise_counts[k] {
            let kind = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble][j % 3];
            let name = format!("noise/{}_{ni:04}_{}.wav", split.name(), format!("{kind:?}").to_lowercase());
            let signal = synth_noise(kind, derive_seed(&[seed, 1, ni]), noise_len, SAMPLE_RATE);
            runtime(wav_bytes(&signal).and_then(|b| dir.write(&name, &b)))?;
            noise.push(Source::Wav { wav: name.into() });
            ni += 1;
        }
        match split {
            Split::Train => (manifest.speech.train, manifest.noise.train) = (speech, noise),
            Split::Val => (manifest.speech.val, manifest.noise.val) = (speech, noise),
            Split::Test => (manifest.speech.test, manifest.noise.test) = (speech, noise),
        }
    }
    runtime(dir.write("manifest.toml", manifest.to_toml_string().as_bytes()))?;
    println!(
        "wrote {} speech clips ({:?} train/val/test) and {} noise files to {}",
        count,
        speech_counts,
        ni,
        out.display()
    );
    runtime(dir.finish(
        "synthdata",
        json!({ "seed": seed, "count": count, "seconds": seconds, "noise_files": ni }),
    ))
}
