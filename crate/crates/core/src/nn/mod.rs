//! UNet teacher/student models, the latent bottleneck adapter, size
//! accounting and checkpoints.

pub mod accounting;
pub mod bottleneck;
pub mod checkpoint;
pub mod config;
pub mod params;
pub mod unet;

pub use accounting::{count_macs, count_mops, count_params};
pub use bottleneck::{Axis, AxisMap, BottleneckAdapter, BottleneckSpec, Scenario};
pub use checkpoint::{Architecture, Checkpoint};
pub use config::{BlockConfig, LatentShape, ModelConfig, ShapeWalk, DESK_INPUT, FULL_INPUT};
pub use params::{NamedTensor, ParamSet};
pub use unet::{UNetModel, UNetOutput};
