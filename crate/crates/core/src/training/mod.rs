//! Multi-flow training: per-flow gradient accumulation, per-group gradient
//! scales, the optimizer and progressive curricula.

mod curriculum;
mod grads;
mod optimizer;
mod step;

pub use curriculum::{
    loss_windows, parse_loss_log, run_curriculum, transfer_shared, CurriculumObserver, CurriculumOptions,
    CurriculumOutcome, CurriculumStage, LossRecord, Progress,
};
pub use grads::{apply_grad_scales, GradScaleConfig, GradientStore};
pub use optimizer::{AdamWConfig, Optimizer};
pub use step::{
    accumulate_flow_grads, accumulation_loop, combined_loss_grads, draw_batches, draw_indices, train_step, DrawConfig,
    FlowBatch, PairedDataset, PairedSample, TrainItem,
};
