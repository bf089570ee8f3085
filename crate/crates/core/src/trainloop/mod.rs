//! Source pretraining, alternating adaptation under each training mode,
//! checkpoints and the repeated-run experiment harness.

mod adapt;
mod checkpoint;
mod config;
mod experiment;
mod pretrain;
mod sampler;

pub use adapt::{
    adapt, da_step_discriminators, da_step_model, AdaptData, AdaptOutcome, DaForward, DetectorState, Discriminators,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Mode, ModeOverride, TrainConfig};
pub use experiment::{
    evaluate, evaluate_set, report, run_experiment, summarize, EvalConfig, OperatingPoint, ExperimentData, ExperimentOutcome,
    ExperimentStats, ModeStats, RunResult, Stat,
};
pub use pretrain::{dataset_loss, pretrain_source, supervised_step, PretrainOutcome};
pub use sampler::{BatchSampler, Sample};
