//! Sampling under mixed contexts: model-level interleave (A) and blend (B),
//! layer-level site schedules and attention-level blends, plus the variation
//! and image-text-image editing pipelines built on them.

mod pipelines;
mod predictor;
mod schedule;

pub use pipelines::{edit_context, i2t2i, image_variation, EditOptions, EditOutcome, EDIT_MIX_RATE, STYLE_LEVEL};
pub use predictor::{sample_flow, sample_mixed, GuidanceSetup, MixedPredictor};
pub use schedule::{interleave, layer_schedule, MixStrategy, MixingPlan};
