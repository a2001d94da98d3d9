//! Windowed-sinc sample-rate conversion (64 taps, Blackman window).

const HALF_TAPS: usize = 32;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    let a = std::f64::consts::PI * (u + 1.0);
    0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

/// Output length for converting `len` samples from `from` Hz to `to` Hz.
pub fn resampled_len(len: usize, from: u32, to: u32) -> usize {
    ((len as u128 * to as u128 + from as u128 / 2) / from as u128) as usize
}

/// Band-limited resampling. The anti-aliasing cutoff is the lower of the
/// two Nyquist frequencies.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let out_len = resampled_len(x.len(), from, to);
    let half = HALF_TAPS as f64;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let center = t.floor() as i64;
            let mut acc = 0.0;
            for k in (center - HALF_TAPS as i64 + 1)..=(center + HALF_TAPS as i64) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let d = t - k as f64;
                if d.abs() >= half {
                    continue;
                }
                acc += x[k as usize] * cutoff * sinc(cutoff * d) * blackman(d / half);
            }
            acc
        })
        .collect()
}
