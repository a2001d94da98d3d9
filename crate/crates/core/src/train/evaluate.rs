use super::features::Prepared;
use crate::data::MixExample;
use crate::dsp::{AudioSignal, StftConfig};
use crate::error::Result;
use crate::metrics::{ExampleMetrics, MetricsReport, Scores};
use crate::nn::UNetModel;

/// Enhanced waveform of one mixture.
pub fn enhance(model: &UNetModel, example: &MixExample, stft: StftConfig) -> Result<AudioSignal> {
    let prep = Prepared::new(example, stft)?;
    let (mask, _) = model.infer(&prep.input)?;
    AudioSignal::new(prep.enhance_value(&mask), example.noisy.sample_rate)
}

/// Scores every example of `test`, in order, for the model output and for
/// the unprocessed mixture.
pub fn evaluate(model: &UNetModel, test: &[MixExample], stft: StftConfig) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(test.len());
    for (index, ex) in test.iter().enumerate() {
        let est = enhance(model, ex, stft)?;
        rows.push(ExampleMetrics {
            index,
            enhanced: Scores::compute(&ex.clean, &est)?,
            noisy: Scores::compute(&ex.clean, &ex.noisy)?,
        });
    }
    Ok(MetricsReport::new(rows))
}
