//! Repeats a short distillation with three seeds and prints the mean/STD
//! table, then shows that equal seeds give zero spread.

use denoise_kd::data::{Corpus, SplitManifest};
use denoise_kd::experiment::{prepare_all, run_distill, run_evaluate, AudioConfig};
use denoise_kd::nn::{ModelConfig, UNetModel};
use denoise_kd::train::{repeat_seeds, run_repeats, AdamConfig, TrainConfig};
use denoise_kd::Result;

fn main() -> Result<()> {
    let audio = AudioConfig::desk();
    let corpus = Corpus::build(&SplitManifest::synthetic([16, 4, 6], [3, 1, 1], 5.0, 3), audio.segment_len)?;
    let test = corpus.test_set(0, Default::default())?;
    let prepared = prepare_all(&test, audio)?;
    // An untrained teacher is enough to exercise the harness.
    let teacher = UNetModel::new(ModelConfig::micro_t1(), 9)?;
    let base = TrainConfig {
        batch_size: 4,
        max_epochs: 2,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    for (label, stride) in [("distinct seeds", 1000), ("equal seeds", 0)] {
        let summary = run_repeats(&repeat_seeds(3, 1, stride), |_, seed| {
            let train = TrainConfig { seed, ..base };
            let run = run_distill(&teacher, ModelConfig::micro_s1(), None, &corpus, audio, &train, &prepared, &mut |_| {})?;
            run_evaluate(&run.student, &test, audio)
        })?;
        print!("{}", summary.table(label));
    }
    Ok(())
}
