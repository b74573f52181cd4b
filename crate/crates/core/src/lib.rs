//! Graph encoder, query aligner, masked diffusion language model, preference
//! objective and sampler, plus the data pipeline that ties them together.

pub mod aligner;
pub mod config;
pub mod data;
pub mod dlm;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod molpo;
pub mod sampler;
pub mod train;

pub use config::Config;
pub use data::{Dataset, InstructionRecord, Split, Task};
pub use error::{CoreError, Result};
pub use model::MolDiff;
pub use train::{run_stage, Stage};
