//! Heart-rate estimation from a single ECG lead with a spiking recurrent
//! network and a fuzzy clustering readout.

pub mod config;
pub mod ecg;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod inference;
pub mod liquid;
pub mod pipeline;
pub mod plasticity;
pub mod readout;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, RunOutput, Stage, StageError};
