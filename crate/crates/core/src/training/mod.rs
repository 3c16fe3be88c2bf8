//! ℓ1 training with Adam, the stepped schedule, and inference.

mod ablation;
mod optim;
mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationStudy, ABLATION_TOLERANCE_DB};
pub use optim::{lr_schedule, step_schedule, AdamConfig, OptimizerState, LR_HALVE_EVERY};
pub use trainer::{
    denoise, evaluate, final_val_psnr, l1_loss, l1_value, tail_val_psnr, train, BestSnapshot, EpochRecord,
    TrainConfig, TrainHistory, Trainer, STATE_MAGIC, STATE_VERSION,
};
