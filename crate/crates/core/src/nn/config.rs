use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv::{conv_out_extent, conv_transpose_out_extent, ConvGeometry};

/// Channel x time x frequency extents of an encoder output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl LatentShape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.c * self.h * self.w
    }
}

impl std::fmt::Display for LatentShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{}, {}, {}}}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl BlockConfig {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(
            (self.stride[0], self.stride[1]),
            (self.padding[0], self.padding[1]),
        )
    }
}

/// Declarative UNet description. The decoder mirrors the encoder block for
/// block, so only the encoder schedule is stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// `[T, F]` of the magnitude input.
    pub input: [usize; 2],
    pub kernel: [usize; 2],
    pub blocks: Vec<BlockConfig>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
}

fn default_slope() -> f64 {
    0.01
}

fn default_eps() -> f64 {
    1e-5
}

/// Per-layer shapes produced by walking a config.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeWalk {
    /// `encoder[0]` is the input; `encoder[n]` is the output of block `n`.
    pub encoder: Vec<[usize; 3]>,
    /// Output padding for decoder block `n` (0-based, decoder order).
    pub decoder_output_padding: Vec<[usize; 2]>,
    /// Input channels of each decoder block, skip concatenation included.
    pub decoder_in_channels: Vec<usize>,
}

impl ShapeWalk {
    pub fn latent(&self) -> LatentShape {
        let [c, h, w] = *self.encoder.last().expect("at least one block");
        LatentShape::new(c, h, w)
    }
}

impl ModelConfig {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel[0], self.kernel[1])
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_walk().map(|_| ())
    }

    pub fn latent_shape(&self) -> Result<LatentShape> {
        Ok(self.shape_walk()?.latent())
    }

    /// Walks the encoder and mirrored decoder, checking every extent.
    pub fn shape_walk(&self) -> Result<ShapeWalk> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig {
                block: 0,
                reason: "a model needs at least one block".into(),
            });
        }
        if self.kernel.contains(&0) || self.input.contains(&0) {
            return Err(Error::InvalidConfig {
                block: 0,
                reason: format!("kernel {:?} and input {:?} must be positive", self.kernel, self.input),
            });
        }
        let (kh, kw) = self.kernel();
        let mut encoder = vec![[1, self.input[0], self.input[1]]];
        for (i, b) in self.blocks.iter().enumerate() {
            let block = i + 1;
            if b.channels == 0 {
                return Err(Error::InvalidConfig {
                    block,
                    reason: "channel count must be positive".into(),
                });
            }
            if b.stride.contains(&0) {
                return Err(Error::InvalidConfig {
                    block,
                    reason: "stride entries must be at least 1".into(),
                });
            }
            let [_, h, w] = *encoder.last().unwrap();
            let extent = |n, k, s, p| {
                conv_out_extent(n, k, s, p).map_err(|_| Error::InvalidConfig {
                    block,
                    reason: format!(
                        "kernel {k} with padding {p} does not fit extent {n}"
                    ),
                })
            };
            let oh = extent(h, kh, b.stride[0], b.padding[0])?;
            let ow = extent(w, kw, b.stride[1], b.padding[1])?;
            encoder.push([b.channels, oh, ow]);
        }

        let n = self.blocks.len();
        let mut decoder_output_padding = Vec::with_capacity(n);
        let mut decoder_in_channels = Vec::with_capacity(n);
        for d in 1..=n {
            // Decoder block d mirrors encoder block m = n - d + 1.
            let m = n - d + 1;
            let b = &self.blocks[m - 1];
            let [c_in, h_in, w_in] = encoder[m];
            let [_, h_out, w_out] = encoder[m - 1];
            decoder_in_channels.push(if d == 1 { c_in } else { 2 * c_in });
            let mut op = [0; 2];
            for (axis, (n_in, n_out, k)) in [(h_in, h_out, kh), (w_in, w_out, kw)].into_iter().enumerate() {
                let base = conv_transpose_out_extent(n_in, k, b.stride[axis], b.padding[axis], 0)
                    .map_err(|e| Error::InvalidConfig {
                        block: m,
                        reason: format!("decoder mirror: {e}"),
                    })?;
                if n_out < base || n_out - base >= b.stride[axis] {
                    return Err(Error::InvalidConfig {
                        block: m,
                        reason: format!(
                            "decoder cannot restore extent {n_out} from {n_in} (axis {axis})"
                        ),
                    });
                }
                op[axis] = n_out - base;
            }
            decoder_output_padding.push(op);
        }
        Ok(ShapeWalk {
            encoder,
            decoder_output_padding,
            decoder_in_channels,
        })
    }

    /// Builds a config whose padding schedule is derived from shape
    /// arithmetic: every block starts from `(k - 1) / 2`, and the last
    /// downsampling block on an axis is widened until the encoder output
    /// hits `target` (`[H, W]`).
    pub fn with_derived_padding(
        name: &str,
        input: [usize; 2],
        kernel: [usize; 2],
        channels: &[usize],
        strides: &[[usize; 2]],
        target: [usize; 2],
    ) -> Result<Self> {
        if channels.len() != strides.len() {
            return Err(Error::InvalidArgument(format!(
                "{} channel entries but {} stride entries",
                channels.len(),
                strides.len()
            )));
        }
        let mut blocks: Vec<BlockConfig> = channels
            .iter()
            .zip(strides)
            .map(|(&c, &s)| BlockConfig {
                channels: c,
                stride: s,
                padding: [(kernel[0] - 1) / 2, (kernel[1] - 1) / 2],
            })
            .collect();
        for axis in 0..2 {
            let walk = |blocks: &[BlockConfig]| -> Option<usize> {
                blocks.iter().try_fold(input[axis], |n, b| {
                    conv_out_extent(n, kernel[axis], b.stride[axis], b.padding[axis]).ok()
                })
            };
            if walk(&blocks) == Some(target[axis]) {
                continue;
            }
            let Some(last_down) = blocks.iter().rposition(|b| b.stride[axis] > 1) else {
                return Err(Error::InvalidConfig {
                    block: blocks.len(),
                    reason: format!("no downsampling block can reach extent {} on axis {axis}", target[axis]),
                });
            };
            let base = blocks[last_down].padding[axis];
            let found = (base..=base + kernel[axis]).find(|&p| {
                let mut trial = blocks.clone();
                trial[last_down].padding[axis] = p;
                walk(&trial) == Some(target[axis])
            });
            match found {
                Some(p) => blocks[last_down].padding[axis] = p,
                None => {
                    return Err(Error::InvalidConfig {
                        block: last_down + 1,
                        reason: format!("no padding reaches extent {} on axis {axis}", target[axis]),
                    })
                }
            }
        }
        let config = Self {
            name: name.to_string(),
            input,
            kernel,
            blocks,
            leaky_slope: default_slope(),
            norm_eps: default_eps(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Teacher 1: six 5x5 blocks, every block halves the frequency axis.
    pub fn t1() -> Self {
        Self::with_derived_padding(
            "t1",
            FULL_INPUT,
            [5, 5],
            &[7, 14, 28, 56, 112, 128],
            &[[1, 2]; 6],
            [126, 5],
        )
        .expect("t1 preset is valid")
    }

    /// Teacher 2: seven 5x5 blocks, frequency halved on odd blocks and
    /// channels doubled on even blocks.
    pub fn t2() -> Self {
        Self::with_derived_padding(
            "t2",
            FULL_INPUT,
            [5, 5],
            &[16, 32, 32, 64, 64, 128, 128],
            &[[1, 2], [1, 1], [1, 2], [1, 1], [1, 2], [1, 1], [1, 2]],
            [126, 17],
        )
        .expect("t2 preset is valid")
    }

    /// Student 1: six 3x3 blocks with stride 1x2.
    pub fn s1() -> Self {
        Self::with_derived_padding(
            "s1",
            FULL_INPUT,
            [3, 3],
            &STUDENT_CHANNELS,
            &[[1, 2]; 6],
            [126, 5],
        )
        .expect("s1 preset is valid")
    }

    /// Student 2: six 3x3 blocks with stride 2x2.
    pub fn s2() -> Self {
        Self::with_derived_padding(
            "s2",
            FULL_INPUT,
            [3, 3],
            &STUDENT_CHANNELS,
            &[[2, 2]; 6],
            [2, 5],
        )
        .expect("s2 preset is valid")
    }

    /// Desk-scale teacher 1: like `t1` with four 3x3 blocks on a
    /// one-second input, latent `{32, 126, 8}`.
    pub fn micro_t1() -> Self {
        Self::with_derived_padding("mt1", DESK_INPUT, [3, 3], &[4, 8, 16, 32], &[[1, 2]; 4], [126, 8])
            .expect("mt1 preset is valid")
    }

    /// Desk-scale teacher 2: alternating strides as in `t2`, latent
    /// `{32, 126, 17}`.
    pub fn micro_t2() -> Self {
        Self::with_derived_padding(
            "mt2",
            DESK_INPUT,
            [3, 3],
            &[8, 8, 16, 16, 32],
            &[[1, 2], [1, 1], [1, 2], [1, 1], [1, 2]],
            [126, 17],
        )
        .expect("mt2 preset is valid")
    }

    /// Desk-scale student 1, latent `{8, 126, 8}`.
    pub fn micro_s1() -> Self {
        Self::with_derived_padding("ms1", DESK_INPUT, [3, 3], &MICRO_STUDENT_CHANNELS, &[[1, 2]; 4], [126, 8])
            .expect("ms1 preset is valid")
    }

    /// Desk-scale student 2, latent `{8, 8, 8}`.
    pub fn micro_s2() -> Self {
        Self::with_derived_padding("ms2", DESK_INPUT, [3, 3], &MICRO_STUDENT_CHANNELS, &[[2, 2]; 4], [8, 8])
            .expect("ms2 preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "t1" => Some(Self::t1()),
            "t2" => Some(Self::t2()),
            "s1" => Some(Self::s1()),
            "s2" => Some(Self::s2()),
            "mt1" => Some(Self::micro_t1()),
            "mt2" => Some(Self::micro_t2()),
            "ms1" => Some(Self::micro_s1()),
            "ms2" => Some(Self::micro_s2()),
            _ => None,
        }
    }
}

/// `[T, F]` for a two-second, 16 kHz signal with a 512-point STFT.
pub const FULL_INPUT: [usize; 2] = [126, 256];

/// `[T, F]` for a one-second, 16 kHz signal with a 256-point STFT.
pub const DESK_INPUT: [usize; 2] = [126, 128];

const STUDENT_CHANNELS: [usize; 6] = [2, 4, 8, 16, 32, 32];
const MICRO_STUDENT_CHANNELS: [usize; 4] = [2, 4, 8, 8];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_latent_shapes() {
        assert_eq!(ModelConfig::t1().latent_shape().unwrap(), LatentShape::new(128, 126, 5));
        assert_eq!(ModelConfig::t2().latent_shape().unwrap(), LatentShape::new(128, 126, 17));
        assert_eq!(ModelConfig::s1().latent_shape().unwrap(), LatentShape::new(32, 126, 5));
        assert_eq!(ModelConfig::s2().latent_shape().unwrap(), LatentShape::new(32, 2, 5));
    }

    #[test]
    fn micro_latent_shapes() {
        assert_eq!(ModelConfig::micro_t1().latent_shape().unwrap(), LatentShape::new(32, 126, 8));
        assert_eq!(ModelConfig::micro_t2().latent_shape().unwrap(), LatentShape::new(32, 126, 17));
        assert_eq!(ModelConfig::micro_s1().latent_shape().unwrap(), LatentShape::new(8, 126, 8));
        assert_eq!(ModelConfig::micro_s2().latent_shape().unwrap(), LatentShape::new(8, 8, 8));
    }

    #[test]
    fn decoder_restores_input_extent() {
        for cfg in [ModelConfig::t1(), ModelConfig::t2(), ModelConfig::s1(), ModelConfig::s2()] {
            let walk = cfg.shape_walk().unwrap();
            assert_eq!(walk.encoder[0], [1, 126, 256]);
            assert_eq!(walk.decoder_output_padding.len(), cfg.n_blocks());
        }
    }

    #[test]
    fn same_padding_toy_keeps_shape() {
        let cfg = ModelConfig::with_derived_padding("toy", [8, 16], [3, 3], &[4], &[[1, 1]], [8, 16]).unwrap();
        assert_eq!(cfg.blocks[0].padding, [1, 1]);
        assert_eq!(cfg.latent_shape().unwrap(), LatentShape::new(4, 8, 16));
    }

    #[test]
    fn bad_configs_name_the_block() {
        let mut cfg = ModelConfig::s1();
        cfg.blocks[3].stride = [0, 2];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { block: 4, .. })));
        let mut cfg = ModelConfig::s1();
        cfg.kernel = [9, 9];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { .. })));
    }
}
