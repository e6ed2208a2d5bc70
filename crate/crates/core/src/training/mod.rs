//! Training loop, schedules, packing, optimizer and fine-tuning variants.

mod finetune;
mod optimizer;
mod packing;
mod schedule;
mod trainer;

pub use finetune::{select_best_checkpoint, CheckpointScores, FineTuneMode, UnfreezeSchedule};
pub use optimizer::{Adam, Optimizer, StepOutcome};
pub use packing::{append_eos, pack_batch, truncate_pair, Footprint, Packer};
pub use schedule::{learning_rate, Schedule};
pub use trainer::{train, write_log, ExampleSource, LogRecord, TrainConfig, TrainOutput, Trainer};
