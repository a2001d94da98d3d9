//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use denoise_kd::data::{mix_at_snr, synth_noise, synth_speechlike, Corpus, NoiseKind, SplitManifest};
use denoise_kd::dsp::{istft, stft, AudioSignal, StftConfig, SAMPLE_RATE};
use denoise_kd::experiment::{prepare_all, run_distill, run_evaluate, run_pretrain, AudioConfig};
use denoise_kd::gradsuite::run_suite;
use denoise_kd::losses::{cosine_distance_value, si_snr, LossWeights};
use denoise_kd::metrics::Scores;
use denoise_kd::nn::{count_mops, count_params, BottleneckAdapter, Checkpoint, ModelConfig, Scenario, UNetModel};
use denoise_kd::tensor::Tensor;
use denoise_kd::train::{AdamConfig, TrainConfig};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = run_suite(0).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(format!("{} rel. error {:.3e} > {:.0e}", bad.name, bad.max_rel_error, bad.tolerance));
    }
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} checks, worst rel. error {worst:.2e}, {secs:.2} s", reports.len()))
}

fn shape_oracle() -> Outcome {
    let want = [("t1", [128, 126, 5]), ("t2", [128, 126, 17]), ("s1", [32, 126, 5]), ("s2", [32, 2, 5])];
    for (name, shape) in want {
        let got = ModelConfig::preset(name).unwrap().latent_shape().map_err(e)?.as_array();
        ensure(got == shape, format!("{name}: {got:?} != {shape:?}"))?;
    }
    let latent = |n: &str| ModelConfig::preset(n).unwrap().latent_shape().unwrap();
    for sc in Scenario::ALL {
        let (t, s) = (latent(sc.teacher()), latent(sc.student()));
        let adapter = BottleneckAdapter::for_scenario(sc, t, s, 0).map_err(e)?;
        let y = adapter.infer(&Tensor::full(&t.as_array(), 0.5)).map_err(e)?;
        ensure(y.shape() == s.as_array(), format!("{sc}: {:?} != {:?}", y.shape(), s.as_array()))?;
    }
    Ok("t1/t2/s1/s2 latents exact, 3 scenarios reach the student shape".into())
}

fn accounting() -> Outcome {
    let models: Vec<UNetModel> = ["t1", "t2", "s1", "s2"].iter().map(|n| UNetModel::new(ModelConfig::preset(n).unwrap(), 0).unwrap()).collect();
    let counts: Vec<usize> = models.iter().map(count_params).collect();
    for ((got, want), name) in counts.iter().zip([1.35e6, 2.04e6, 37e3, 37e3]).zip(["t1", "t2", "s1", "s2"]) {
        ensure((*got as f64 / want - 1.0).abs() <= 0.15, format!("{name}: {got} params vs {want}"))?;
    }
    ensure(counts[2] == counts[3], format!("s1 {} != s2 {}", counts[2], counts[3]))?;
    let m: Vec<f64> = models.iter().map(count_mops).collect();
    ensure(m[3] < m[2] && m[2] < m[0] && m[0] < m[1], format!("MOps {m:?}"))?;
    Ok(format!("params {counts:?}, MOps s2 {:.0} < s1 {:.0} < t1 {:.0} < t2 {:.0}", m[3], m[2], m[0], m[1]))
}

fn loss_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut cos_dev, mut snr_dev, mut fixed_dev) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let a: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (k, m) = (10f64.powf(rng.random_range(-3.0..3.0)), 10f64.powf(rng.random_range(-3.0..3.0)));
        let t = |v: &[f64]| Tensor::from_vec(v.to_vec());
        let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<_>>();
        let base = cosine_distance_value(&t(&a), &t(&b)).map_err(e)?;
        cos_dev = cos_dev.max((cosine_distance_value(&t(&scale(&a, k)), &t(&scale(&b, m))).map_err(e)? - base).abs());
        fixed_dev = fixed_dev.max(cosine_distance_value(&t(&a), &t(&a)).map_err(e)?.abs());
        fixed_dev = fixed_dev.max((cosine_distance_value(&t(&a), &t(&scale(&a, -1.0))).map_err(e)? - 2.0).abs());

        let est: Vec<f64> = a.iter().zip(&b).map(|(x, n)| x + 0.3 * n).collect();
        snr_dev = snr_dev.max((si_snr(&a, &scale(&est, k)).map_err(e)? - si_snr(&a, &est).map_err(e)?).abs());
    }
    // The reported SI-SDR metric on a full-length signal.
    let clean = synth_speechlike(3, 16_000, SAMPLE_RATE);
    let noise = synth_noise(NoiseKind::Pink, 4, 16_000, SAMPLE_RATE);
    let noisy = mix_at_snr(&clean, &noise, 5).map_err(e)?.noisy;
    let scaled = AudioSignal::new(noisy.samples.iter().map(|s| s * 0.01).collect(), SAMPLE_RATE).map_err(e)?;
    let (m1, m2) = (Scores::compute(&clean, &noisy).map_err(e)?, Scores::compute(&clean, &scaled).map_err(e)?);
    snr_dev = snr_dev.max((m1.si_sdr_db - m2.si_sdr_db).abs());

    ensure(cos_dev <= 1e-12, format!("cosine scale deviation {cos_dev:.2e}"))?;
    ensure(snr_dev <= 1e-9, format!("SI-SNR/SI-SDR scale deviation {snr_dev:.2e} dB"))?;
    ensure(fixed_dev <= 1e-12, format!("cos(A,A)/cos(A,-A) deviation {fixed_dev:.2e}"))?;
    Ok(format!("cosine {cos_dev:.1e}, SI-SNR/SI-SDR {snr_dev:.1e} dB, fixed points {fixed_dev:.1e}"))
}

fn dsp() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let x = synth_speechlike(seed, 32_000, SAMPLE_RATE);
        let spec = stft(&x, StftConfig::default()).map_err(e)?;
        let y = istft(&spec.magnitude(), &spec, Some(x.len())).map_err(e)?;
        let num: f64 = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x.samples.iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    ensure(worst <= 1e-6, format!("round trip rel. L2 {worst:.2e}"))?;
    let mag = stft(&synth_speechlike(9, 32_000, SAMPLE_RATE), StftConfig::default()).map_err(e)?.model_magnitude();
    ensure((mag.frames, mag.bins) == (126, 256), format!("grid {}x{}", mag.frames, mag.bins))?;
    Ok(format!("round trip rel. L2 {worst:.2e}, 32000 samples -> 126x256"))
}

fn mixing() -> Outcome {
    let (mut dev, mut peak) = (0.0f64, 0.0f64);
    let kinds = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];
    for snr in -5..=20 {
        for (i, kind) in kinds.into_iter().enumerate() {
            let clean = synth_speechlike((snr + 5) as u64 * 7 + i as u64, 16_000, SAMPLE_RATE);
            let noise = synth_noise(kind, (100 + snr) as u64, 16_000, SAMPLE_RATE);
            let ex = mix_at_snr(&clean, &noise, snr).map_err(e)?;
            let s: f64 = ex.clean.samples.iter().map(|x| x * x).sum();
            let n: f64 = ex.clean.samples.iter().zip(&ex.noisy.samples).map(|(c, y)| (y - c).powi(2)).sum();
            dev = dev.max((10.0 * (s / n).log10() - snr as f64).abs());
            peak = peak.max(ex.noisy.peak());
        }
    }
    ensure(dev <= 1e-6, format!("SNR deviation {dev:.2e} dB"))?;
    ensure(peak <= 1.0, format!("peak {peak}"))?;
    Ok(format!("78 mixtures, SNR deviation {dev:.1e} dB, max peak {peak:.4}"))
}

fn desk_end_to_end() -> Outcome {
    let audio = AudioConfig::desk();
    let start = Instant::now();
    let corpus = Corpus::build(&SplitManifest::synthetic([200, 50, 50], [12, 6, 6], 10.0, 11), audio.segment_len).map_err(e)?;
    let test = corpus.test_set(0, Default::default()).map_err(e)?;
    let prepared = prepare_all(&test, audio).map_err(e)?;
    let train = TrainConfig {
        batch_size: 8,
        max_epochs: 50,
        patience: 3,
        seed: 1,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };

    let (teacher, pre) = run_pretrain(ModelConfig::micro_t1(), &corpus, audio, &train, &mut |_| {}).map_err(e)?;
    let report = run_evaluate(&teacher, &test, audio).map_err(e)?;
    let gain = report.aggregate().si_sdr_db.mean - report.baseline().si_sdr_db.mean;
    let teacher_secs = start.elapsed().as_secs_f64();
    let a = gain >= 3.0 && pre.history.rows.len() <= 50 && teacher_secs < 1800.0;
    let a_msg = format!(
        "(a) teacher +{gain:.2} dB SI-SDR over noisy, {} epochs, {teacher_secs:.0} s",
        pre.history.rows.len()
    );

    let before = Checkpoint::from_unet(&teacher, Default::default()).to_bytes().map_err(e)?;
    let kd = run_distill(&teacher, ModelConfig::micro_s1(), Some(Scenario::T1S1), &corpus, audio, &train, &prepared, &mut |_| {}).map_err(e)?;
    let ratio = kd.kd_final / kd.kd_initial;
    let b = ratio < 0.5;
    let b_msg = format!("(b) L_kd {:.3} -> {:.3} ({:.0}%)", kd.kd_initial, kd.kd_final, 100.0 * ratio);
    let after = Checkpoint::from_unet(&teacher, Default::default()).to_bytes().map_err(e)?;
    let d = before == after;
    let d_msg = format!("(d) teacher bytes {}", if d { "unchanged" } else { "changed" });

    let short = TrainConfig {
        max_epochs: 3,
        weights: LossWeights { lambda_kd: 0.0, lambda_out: 1.0 },
        ..train
    };
    let zero = run_distill(&teacher, ModelConfig::micro_s1(), Some(Scenario::T1S1), &corpus, audio, &short, &prepared, &mut |_| {}).map_err(e)?;
    let (sup, sup_out) = run_pretrain(ModelConfig::micro_s1(), &corpus, audio, &short, &mut |_| {}).map_err(e)?;
    let cols = |h: &denoise_kd::train::History| h.rows.iter().map(|r| (r.l_out, r.l_tot, r.val_loss, r.best_val)).collect::<Vec<_>>();
    let c = zero.student == sup && cols(&zero.outcome.history) == cols(&sup_out.history);
    let c_msg = format!("(c) lambda_kd=0 {} supervised run", if c { "bit-matches" } else { "differs from" });

    let msg = format!("{a_msg}; {b_msg}; {c_msg}; {d_msg}; total {:.0} s", start.elapsed().as_secs_f64());
    if a && b && c && d {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_denoise-kd")).args(args).output().map_err(e)?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn repeat_harness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    cli(&["synthdata", "--out", &p("data"), "--seed", "3", "--count", "20"])?;
    let cfg = dir.join("exp.toml");
    std::fs::write(
        &cfg,
        "[models]\nteacher = \"mt1\"\nstudent = \"ms1\"\nscenario = \"t1s1\"\n\n[audio]\nsegment_len = 16000\nfft_size = 256\nhop = 128\n\n\
         [data]\nmanifest = \"data/manifest.toml\"\n\n[train]\nbatch_size = 4\nmax_epochs = 1\nseed = 1\n",
    )
    .map_err(e)?;
    let teacher = UNetModel::new(ModelConfig::micro_t1(), 5).map_err(e)?;
    Checkpoint::from_unet(&teacher, Default::default()).save(Path::new(&p("teacher.ckpt"))).map_err(e)?;

    let stdout = cli(&["distill", "--config", &p("exp.toml"), "--teacher", &p("teacher.ckpt"), "--out", &p("r5"), "--repeats", "5"])?;
    ensure(stdout.contains("Mean/STD of evaluation metrics") && stdout.contains("5 runs"), "table header missing")?;
    for row in ["SDR", "SI-SDR", "STOI"] {
        ensure(stdout.lines().any(|l| l.starts_with(row)), format!("row {row} missing"))?;
    }
    let std_of = |name: &str| -> Result<Vec<f64>, String> {
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(name).join("summary.json")).map_err(e)?).map_err(e)?;
        Ok(["sdr_db", "si_sdr_db", "stoi"].iter().map(|k| json[k]["std"].as_f64().unwrap_or(f64::NAN)).collect())
    };
    let spread = std_of("r5")?;
    ensure(spread.iter().any(|&s| s > 0.0), "distinct seeds gave zero spread")?;

    cli(&[
        "distill", "--config", &p("exp.toml"), "--teacher", &p("teacher.ckpt"), "--out", &p("eq"), "--repeats", "5", "--seed-stride", "0",
    ])?;
    let equal = std_of("eq")?;
    ensure(equal.iter().all(|&s| s == 0.0), format!("equal seeds gave STD {equal:?}"))?;
    Ok(format!("5-run table emitted, STD {spread:.3?} with distinct seeds, {equal:?} with equal seeds"))
}

fn main() {
    let checks: [Check; 8] = [
        ("gradient suite", gradient_suite),
        ("shape oracle", shape_oracle),
        ("accounting", accounting),
        ("loss invariances", loss_invariances),
        ("dsp", dsp),
        ("mixing", mixing),
        ("desk end-to-end", desk_end_to_end),
        ("repeat harness", repeat_harness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
