//! Pretrains the desk-scale teacher on a small synthetic corpus and compares
//! its test scores with the unprocessed mixtures.

use denoise_kd::data::{Corpus, SplitManifest};
use denoise_kd::experiment::{run_evaluate, run_pretrain, AudioConfig};
use denoise_kd::nn::ModelConfig;
use denoise_kd::train::{AdamConfig, TrainConfig};
use denoise_kd::Result;

fn main() -> Result<()> {
    let audio = AudioConfig::desk();
    let corpus = Corpus::build(&SplitManifest::synthetic([60, 20, 20], [6, 2, 2], 10.0, 1), audio.segment_len)?;
    let train = TrainConfig {
        batch_size: 8,
        max_epochs: 6,
        patience: 3,
        seed: 1,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let (teacher, outcome) = run_pretrain(ModelConfig::micro_t1(), &corpus, audio, &train, &mut |r| {
        println!("epoch {:>2}  train -SI-SNR {:>8.3}  val {:>8.3}", r.epoch, r.l_out, r.val_loss)
    })?;
    let test = corpus.test_set(0, train.snr)?;
    let report = run_evaluate(&teacher, &test, audio)?;
    let (enh, noisy) = (report.aggregate(), report.baseline());
    println!("best epoch {}", outcome.best_epoch);
    println!("SI-SDR {:.3} dB vs {:.3} dB unprocessed", enh.si_sdr_db.mean, noisy.si_sdr_db.mean);
    println!("STOI   {:.4} vs {:.4} unprocessed", enh.stoi.mean, noisy.stoi.mean);
    Ok(())
}
