//! The encoder-decoder Transformer and its single-stack variants.

mod accounting;
mod checkpoint;
mod config;
mod mask;
mod transformer;

pub use accounting::{count_params, estimate_flops};
pub use checkpoint::{Checkpoint, Manifest};
pub use config::{Architecture, ModelConfig};
pub use mask::{build_mask, relative_bucket, MaskPattern, ModelBatch, StackInput};
pub use transformer::{attention, StackKind, Transformer};
