use denoise_kd::dsp::AudioSignal;
use denoise_kd::metrics::{sdr, si_sdr, stoi, ExampleMetrics, MetricsReport, Scores, Stat};
use denoise_kd::Error;

fn lcg(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn tones(fs: u32, n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            let env = 0.5 * (1.0 - (2.0 * PI * 3.0 * t).cos());
            env * (0.5 * (2.0 * PI * 220.0 * t).sin()
                + 0.3 * (2.0 * PI * 660.0 * t + 0.4).sin()
                + 0.2 * (2.0 * PI * 1430.0 * t + 1.1).sin())
        })
        .collect()
}

fn pair(fs: u32, n: usize, gain: f64) -> (AudioSignal, AudioSignal) {
    let clean = tones(fs, n);
    let noisy = clean.iter().zip(lcg(n, 12345)).map(|(c, e)| c + gain * e).collect();
    (AudioSignal::new(clean, fs).unwrap(), AudioSignal::new(noisy, fs).unwrap())
}

// Reference values from pystoi 0.4 (`stoi(clean, noisy, fs, extended=False)`)
// on the same deterministic signals.
#[test]
fn stoi_matches_reference_at_10khz() {
    for (gain, want) in [(0.05, 0.6505009400723264), (0.3, 0.5999328711917854), (1.0, 0.475160081228772)] {
        let (c, y) = pair(10_000, 20_000, gain);
        let got = stoi(&c, &y).unwrap();
        assert!((got - want).abs() < 1e-9, "gain {gain}: {got} vs {want}");
    }
}

#[test]
fn stoi_after_resampling_is_close_to_reference() {
    // The resampling filters differ, so only approximate agreement is expected.
    for (gain, want) in [(0.05, 0.6648770164200447), (0.3, 0.6160038860090868), (1.0, 0.5005526826152644)] {
        let (c, y) = pair(16_000, 32_000, gain);
        let got = stoi(&c, &y).unwrap();
        assert!((got - want).abs() < 5e-3, "gain {gain}: {got} vs {want}");
    }
}

#[test]
fn stoi_of_identical_signals_is_one() {
    let (c, _) = pair(16_000, 32_000, 0.0);
    assert!((stoi(&c, &c).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn short_signals_are_rejected() {
    let (c, y) = pair(10_000, 3000, 0.1);
    assert!(matches!(stoi(&c, &y), Err(Error::SignalTooShort { .. })));
}

#[test]
fn sdr_hand_values() {
    // Residual is a tenth of the target: 20 dB.
    let x = [1.0, -2.0, 3.0, 0.5];
    let y: Vec<f64> = x.iter().map(|v| v * 1.1).collect();
    assert!((sdr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    // Pure scaling is invisible to SI-SDR.
    assert_eq!(si_sdr(&x, &y).unwrap(), 120.0);
    // Orthogonal error of equal energy: 0 dB.
    assert!(si_sdr(&[1.0, 0.0], &[1.0, 1.0]).unwrap().abs() < 1e-9);
}

#[test]
fn report_csv_round_trip_and_population_std() {
    let s = |v: f64| Scores { sdr_db: v, si_sdr_db: v + 1.0, stoi: v / 10.0 };
    let report = MetricsReport::new(
        (0..4)
            .map(|i| ExampleMetrics { index: i, enhanced: s(i as f64), noisy: s(-(i as f64)) })
            .collect(),
    );
    let back = MetricsReport::from_csv(&report.to_csv()).unwrap();
    assert_eq!(back, report);
    let agg = report.aggregate();
    assert_eq!(agg.sdr_db.mean, 1.5);
    assert!((agg.sdr_db.std - 1.25f64.sqrt()).abs() < 1e-15);
    assert_eq!(Stat::of(&[2.0, 2.0, 2.0]).std, 0.0);
    assert!(report.to_csv().starts_with("row,index,sdr_db,si_sdr_db,stoi,noisy_sdr_db,noisy_si_sdr_db,noisy_stoi\n"));
}
