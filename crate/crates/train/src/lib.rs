//! Everything around the network needed to use it: PNG datasets, a
//! procedural pair generator, test-time corruptions, AdamW training with
//! checkpoints and CSV metric logs, inference and cost profiling.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod infer;
pub mod optim;
pub mod perturb;
pub mod profile;
pub mod settings;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::{load_dataset, load_splits, save_dataset, Dataset, Sample};
pub use error::{Result, TrainError};
pub use optim::{AdamW, AdamWParams};
pub use perturb::{perturb, PerturbKind};
pub use profile::{profile, CostReport};
pub use settings::{RunConfig, TrainSettings};
pub use synth::{synth_generate, SynthOptions};
pub use trainer::{evaluate, train, EpochLog, OutputDir, TrainReport};
