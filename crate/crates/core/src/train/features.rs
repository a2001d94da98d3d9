use std::sync::Arc;

use crate::data::MixExample;
use crate::dsp::{stft, StftConfig, SynthesisPlan};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Model input and frozen-phase synthesis for one mixture.
pub struct Prepared {
    /// Noisy magnitude, `[1, T, F]`.
    pub input: Tensor,
    /// Magnitude-to-waveform map using the noisy phase.
    pub plan: Arc<SynthesisPlan>,
    /// Waveform of the noisy Nyquist bin alone. The models never see this
    /// bin, so it is passed through unmasked.
    pub nyquist: Tensor,
    pub clean: Tensor,
}

impl Prepared {
    pub fn new(example: &MixExample, config: StftConfig) -> Result<Self> {
        let len = example.noisy.len();
        let spec = stft(&example.noisy, config)?;
        let mag = spec.model_magnitude();
        let plan = SynthesisPlan::new(&spec, mag.bins, Some(len))?;
        let full = spec.magnitude();
        let mut only_nyquist = vec![0.0; full.data.len()];
        for t in 0..full.frames {
            let i = t * full.bins + full.bins - 1;
            only_nyquist[i] = full.data[i];
        }
        let nyquist = SynthesisPlan::new(&spec, full.bins, Some(len))?.synthesize(&only_nyquist);
        Ok(Self {
            input: mag.to_tensor(),
            plan: Arc::new(plan),
            nyquist: Tensor::from_vec(nyquist),
            clean: Tensor::from_vec(example.clean.samples.clone()),
        })
    }

    /// `mask ⊙ |Y|` resynthesized with the noisy phase.
    pub fn enhance(&self, tape: &mut Tape, input: Var, mask: Var) -> Result<Var> {
        let denoised = tape.mul(mask, input)?;
        let wave = tape.linear(denoised, self.plan.clone())?;
        let nyquist = tape.constant(self.nyquist.clone());
        tape.add(wave, nyquist)
    }

    /// Waveform for a mask computed outside any tape.
    pub fn enhance_value(&self, mask: &Tensor) -> Vec<f64> {
        let denoised: Vec<f64> = mask.data().iter().zip(self.input.data()).map(|(m, y)| m * y).collect();
        let mut wave = self.plan.synthesize(&denoised);
        wave.iter_mut().zip(self.nyquist.data()).for_each(|(w, n)| *w += n);
        wave
    }
}
