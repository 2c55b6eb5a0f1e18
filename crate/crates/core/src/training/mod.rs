//! Deterministic training, fine-tuning and run-directory management.

mod config;
mod optim;
mod run;

pub use config::{RunConfig, TrainConfig};
pub use optim::{inverse_sqrt_lr, Adam};
pub use run::{finetune, finetune_run, loss_and_grads, mean_loss, train, MetricsRecord, RunDir, TrainOutcome};
