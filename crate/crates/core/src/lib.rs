//! Text-to-text transfer learning at desk scale.

pub mod cleaning;
pub mod corruption;
pub mod decode;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod numerics;
pub mod scaling;
pub mod tasks;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
