use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::dsp::resample::resample;
use crate::dsp::{AudioSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a mono PCM (8 to 32-bit integer, or 32-bit float) WAV file and
/// resamples it to 16 kHz. Multi-channel files are rejected.
pub fn load_wav(path: &Path) -> Result<AudioSignal> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedAudio(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, only mono is accepted",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
    };
    let samples = if spec.sample_rate == SAMPLE_RATE {
        samples
    } else {
        resample(&samples, spec.sample_rate, SAMPLE_RATE)
    };
    AudioSignal::new(samples, SAMPLE_RATE)
}

/// 16-bit PCM mono WAV bytes at the signal's rate, clipping to `[-1, 1)`.
pub fn wav_bytes(signal: &AudioSignal) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    let mut writer = WavWriter::new(&mut cursor, spec)?;
    for &v in &signal.samples {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(cursor.into_inner())
}

pub fn save_wav(signal: &AudioSignal, path: &Path) -> Result<()> {
    std::fs::write(path, wav_bytes(signal)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedAudio(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.wav"));
    }
}
