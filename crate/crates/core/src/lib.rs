pub mod attrs;
pub mod blending;
pub mod cli;
pub mod context;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod flow;
pub mod net;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use flow::{FlowSpec, Modality};
