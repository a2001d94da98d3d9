//! Optimization, the training loops, evaluation and repeated runs.

pub mod adam;
pub mod evaluate;
pub mod features;
pub mod repeats;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use evaluate::{enhance, evaluate};
pub use features::Prepared;
pub use repeats::{repeat_seeds, run_repeats, summarize, RepeatSummary};
pub use trainer::{
    distill, kd_loss, pretrain, EarlyStopping, History, HistoryRow, StopDecision, TrainConfig, TrainOutcome,
};
