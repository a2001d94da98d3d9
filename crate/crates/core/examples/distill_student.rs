//! Briefly pretrains a micro teacher, then distills the `ms2` student
//! through a C+H adapter and reports the KD loss before and after.

use denoise_kd::data::{Corpus, SplitManifest};
use denoise_kd::experiment::{prepare_all, run_distill, run_evaluate, run_pretrain, AudioConfig};
use denoise_kd::nn::{ModelConfig, Scenario};
use denoise_kd::train::{AdamConfig, TrainConfig};
use denoise_kd::Result;

fn main() -> Result<()> {
    let audio = AudioConfig::desk();
    let corpus = Corpus::build(&SplitManifest::synthetic([60, 20, 20], [6, 2, 2], 10.0, 2), audio.segment_len)?;
    let train = TrainConfig {
        batch_size: 8,
        max_epochs: 4,
        patience: 2,
        seed: 4,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let (teacher, _) = run_pretrain(ModelConfig::micro_t1(), &corpus, audio, &train, &mut |_| {})?;
    let digest = teacher.params().digest();

    let test = corpus.test_set(0, train.snr)?;
    let prepared = prepare_all(&test, audio)?;
    let run = run_distill(&teacher, ModelConfig::micro_s2(), Some(Scenario::T1S2), &corpus, audio, &train, &prepared, &mut |r| {
        println!("epoch {:>2}  L_kd {:.4}  L_out {:>8.3}  L_tot {:>8.3}", r.epoch, r.l_kd, r.l_out, r.l_tot)
    })?;
    println!("test L_kd {:.4} -> {:.4}", run.kd_initial, run.kd_final);
    println!("teacher unchanged: {}", teacher.params().digest() == digest);
    let report = run_evaluate(&run.student, &test, audio)?;
    println!(
        "student SI-SDR {:.3} dB vs {:.3} dB unprocessed",
        report.aggregate().si_sdr_db.mean,
        report.baseline().si_sdr_db.mean
    );
    Ok(())
}
