//! SDR, SI-SDR and STOI of a noisy mixture and of a rescaled clean copy.

use denoise_kd::data::{mix_at_snr, synth_noise, synth_speechlike, NoiseKind};
use denoise_kd::dsp::{AudioSignal, SAMPLE_RATE};
use denoise_kd::metrics::Scores;
use denoise_kd::Result;

fn main() -> Result<()> {
    let clean = synth_speechlike(5, 32_000, SAMPLE_RATE);
    let noise = synth_noise(NoiseKind::Pink, 6, 32_000, SAMPLE_RATE);
    let ex = mix_at_snr(&clean, &noise, 5)?;
    let quiet = AudioSignal::new(ex.clean.samples.iter().map(|v| 0.5 * v).collect(), SAMPLE_RATE)?;
    for (name, est) in [("noisy 5 dB", &ex.noisy), ("clean x 0.5", &quiet)] {
        let s = Scores::compute(&ex.clean, est)?;
        println!("{name:<12} SDR {:>8.3} dB  SI-SDR {:>8.3} dB  STOI {:.4}", s.sdr_db, s.si_sdr_db, s.stoi);
    }
    Ok(())
}
