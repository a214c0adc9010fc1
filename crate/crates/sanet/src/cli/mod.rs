//! Command-line surface: dataset I/O, synthetic scenes, training and
//! evaluation drivers, the ablation runner, and checkpointing.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod pnm;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use commands::{
    cmd_ablate, cmd_eval, cmd_flops, cmd_gradcheck, cmd_infer, cmd_synth, cmd_train, AblateRow,
    TrainOutcome,
};
pub use config::{CheckpointCriterion, LossKind, RunConfig};
pub use data::{generate_synthetic, load_dataset, load_sample, palette, Sample};
