use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LatentShape, ModelConfig, ShapeWalk};
use super::params::{uniform, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeometry;
use crate::tensor::{Tape, Tensor, Var};

/// Realized encoder-decoder with skip connections and a sigmoid mask head.
///
/// Encoder block: conv2d -> instance norm -> leaky ReLU.
/// Decoder block: transposed conv2d -> instance norm -> leaky ReLU, except
/// the last, which is transposed conv2d -> sigmoid. Decoder blocks after the
/// first take the previous decoder output concatenated (channel-wise) with
/// the mirrored encoder output; the last encoder output is not reused.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel {
    config: ModelConfig,
    walk: ShapeWalk,
    params: ParamSet,
}

/// Vars produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct UNetOutput {
    /// `[1, T, F]`, values in (0, 1).
    pub mask: Var,
    /// `[C, H, W]` encoder output.
    pub latent: Var,
}

struct EncoderVars {
    weight: Var,
    bias: Var,
    gamma: Var,
    beta: Var,
}

impl UNetModel {
    /// Random initialization: He-uniform weights for the leaky-ReLU gain,
    /// zero biases, unit norm scales.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let walk = config.shape_walk()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (kh, kw) = config.kernel();
        let gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        let mut params = ParamSet::new();
        for (i, b) in config.blocks.iter().enumerate() {
            let c_in = walk.encoder[i][0];
            let fan_in = (c_in * kh * kw) as f64;
            let bound = gain * (3.0 / fan_in).sqrt();
            let n = i + 1;
            params.push(format!("enc{n}.weight"), uniform(&[b.channels, c_in, kh, kw], bound, &mut rng));
            params.push(format!("enc{n}.bias"), Tensor::zeros(&[b.channels]));
            params.push(format!("enc{n}.gamma"), Tensor::full(&[b.channels], 1.0));
            params.push(format!("enc{n}.beta"), Tensor::zeros(&[b.channels]));
        }
        let n_blocks = config.n_blocks();
        for d in 1..=n_blocks {
            let m = n_blocks - d + 1;
            let b = &config.blocks[m - 1];
            let c_in = walk.decoder_in_channels[d - 1];
            let c_out = walk.encoder[m - 1][0];
            // Each output sees roughly c_in * k^2 / stride^2 taps.
            let fan_in = (c_in * kh * kw) as f64 / (b.stride[0] * b.stride[1]) as f64;
            let bound = gain * (3.0 / fan_in).sqrt();
            params.push(format!("dec{d}.weight"), uniform(&[c_in, c_out, kh, kw], bound, &mut rng));
            params.push(format!("dec{d}.bias"), Tensor::zeros(&[c_out]));
            if d < n_blocks {
                params.push(format!("dec{d}.gamma"), Tensor::full(&[c_out], 1.0));
                params.push(format!("dec{d}.beta"), Tensor::zeros(&[c_out]));
            }
        }
        Ok(Self {
            config,
            walk,
            params,
        })
    }

    /// A model whose mask is exactly 1 everywhere: all weights zero and a
    /// saturating bias on the output layer.
    pub fn identity_mask(config: ModelConfig) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let last = format!("dec{}.bias", model.config.n_blocks());
        for e in model.params.entries_mut() {
            let fill = if e.name == last {
                40.0
            } else if e.name.ends_with(".gamma") {
                1.0
            } else {
                0.0
            };
            e.tensor.data_mut().iter_mut().for_each(|v| *v = fill);
        }
        Ok(model)
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against the layout `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::new(config, 0)?;
        check_layout(&template.params, &params)?;
        Ok(Self {
            params,
            ..template
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shape_walk(&self) -> &ShapeWalk {
        &self.walk
    }

    pub fn latent_shape(&self) -> LatentShape {
        self.walk.latent()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.walk.encoder[0]
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_input(&self, tape: &Tape, input: Var) -> Result<()> {
        let shape = tape.value(input).shape();
        if shape != self.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "unet input",
                left: self.input_shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn encoder_vars(&self, vars: &[Var], block: usize) -> EncoderVars {
        let base = 4 * block;
        EncoderVars {
            weight: vars[base],
            bias: vars[base + 1],
            gamma: vars[base + 2],
            beta: vars[base + 3],
        }
    }

    fn geometry(&self, block: usize) -> ConvGeometry {
        self.config.blocks[block].geometry()
    }

    /// Encoder pass; returns every block output (the last is the latent).
    fn encode_all(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Vec<Var>> {
        self.check_input(tape, input)?;
        let mut h = input;
        let mut outputs = Vec::with_capacity(self.config.n_blocks());
        for i in 0..self.config.n_blocks() {
            let p = self.encoder_vars(vars, i);
            h = tape.conv2d(h, p.weight, Some(p.bias), self.geometry(i))?;
            h = tape.instance_norm(h, p.gamma, p.beta, self.config.norm_eps)?;
            h = tape.leaky_relu(h, self.config.leaky_slope);
            outputs.push(h);
        }
        Ok(outputs)
    }

    /// Latent representation only (no decoder work).
    pub fn encode(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        Ok(*self.encode_all(tape, vars, input)?.last().expect("non-empty"))
    }

    /// Full forward pass. `vars` must come from binding [`Self::params`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<UNetOutput> {
        if vars.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let enc = self.encode_all(tape, vars, input)?;
        let n = self.config.n_blocks();
        let latent = enc[n - 1];
        let mut idx = 4 * n;
        let mut d = latent;
        for dec in 1..=n {
            let m = n - dec + 1;
            if dec > 1 {
                d = tape.concat(&[d, enc[m - 1]])?;
            }
            let (weight, bias) = (vars[idx], vars[idx + 1]);
            idx += 2;
            let op = self.walk.decoder_output_padding[dec - 1];
            d = tape.conv2d_transpose(d, weight, Some(bias), self.geometry(m - 1), (op[0], op[1]))?;
            if dec < n {
                let (gamma, beta) = (vars[idx], vars[idx + 1]);
                idx += 2;
                d = tape.instance_norm(d, gamma, beta, self.config.norm_eps)?;
                d = tape.leaky_relu(d, self.config.leaky_slope);
            } else {
                d = tape.sigmoid(d);
            }
        }
        Ok(UNetOutput { mask: d, latent })
    }

    /// Forward pass on a throwaway tape; returns `(mask, latent)` values.
    pub fn infer(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok((tape.value(out.mask).clone(), tape.value(out.latent).clone()))
    }

    /// Latent representation computed on a throwaway tape.
    pub fn infer_latent(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let latent = self.encode(&mut tape, &vars, x)?;
        Ok(tape.value(latent).clone())
    }
}

pub(crate) fn check_layout(expected: &ParamSet, got: &ParamSet) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    for (e, g) in expected.entries().iter().zip(got.entries()) {
        if e.name != g.name || e.tensor.shape() != g.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "layout expects `{}` {:?}, found `{}` {:?}",
                e.name,
                e.tensor.shape(),
                g.name,
                g.tensor.shape()
            )));
        }
    }
    Ok(())
}
