//! Sub-layer importance analysis for small encoder-decoder transformers.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod importance;
pub mod model;
pub mod numerics;
pub mod report;
pub mod rng;
pub mod surgery;
pub mod training;

pub use data::{Corpus, DataConfig, Pair, Split, Task};
pub use error::{Error, Result};
pub use importance::{EvalContext, ImportanceGrid};
pub use model::{Checkpoint, ComponentId, InterpolationSpec, MaskSpec, Model, ModelConfig};
pub use report::EvalSet;
pub use rng::SeedBundle;
pub use training::{RunConfig, RunDir, TrainConfig};
