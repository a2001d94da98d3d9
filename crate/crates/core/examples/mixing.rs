//! Mixes synthetic speech with each noise type at a few SNRs and reports
//! the realized SNR and the mixture peak.

use denoise_kd::data::{mix_at_snr, synth_noise, synth_speechlike, NoiseKind};
use denoise_kd::dsp::SAMPLE_RATE;
use denoise_kd::Result;

fn main() -> Result<()> {
    let clean = synth_speechlike(11, 16_000, SAMPLE_RATE);
    println!("{:<7} {:>6} {:>12} {:>8}", "noise", "snr", "realized", "peak");
    for (i, kind) in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble].into_iter().enumerate() {
        let noise = synth_noise(kind, 20 + i as u64, 16_000, SAMPLE_RATE);
        for snr in [-5, 5, 20] {
            let ex = mix_at_snr(&clean, &noise, snr)?;
            // The same scale is applied to clean and noise, so the ratio survives.
            let residual: f64 = ex.noisy.samples.iter().zip(&ex.clean.samples).map(|(y, x)| (y - x) * (y - x)).sum();
            let signal: f64 = ex.clean.samples.iter().map(|x| x * x).sum();
            let realized = 10.0 * (signal / residual).log10();
            println!("{:<7} {:>6} {:>12.6} {:>8.4}", format!("{kind:?}"), snr, realized, ex.noisy.peak());
        }
    }
    Ok(())
}
