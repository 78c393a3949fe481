//! Command-line surface: run configs, checkpoints and the subcommands.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{stored_crc, Checkpoint, DTYPE_F64, VDCK_MAGIC, VDCK_VERSION};
pub use commands::{
    loss_csv, run, run_args, BlendArgs, Cli, Command, EditArgs, GenDataArgs, GradcheckArgs, ParamsReportArgs,
    PlotLossArgs, SampleArgs, SamplingArgs, TrainArgs, VariationArgs, GRADCHECK_TOLERANCE,
};
pub use config::RunConfig;
