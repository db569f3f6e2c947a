//! Change detection on bi-temporal image pairs.
//!
//! The network encodes both dates with a shared lightweight CNN whose first
//! three layers are gated by features of the absolute difference image, then
//! decodes level by level with a four-direction selective-scan fusion block
//! weighted by the feature difference of the two dates.

pub mod backbone;
pub mod blocks;
pub mod config;
pub mod decoder;
pub mod dgm;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod scan;
pub mod vssm;

pub use config::{BackboneConfig, ChannelGate, ModelConfig};
pub use error::{ModelError, Result};
pub use loss::Labels;
pub use metrics::{ConfusionCounts, Metrics};
pub use model::{EncoderOutput, LdgNet, ModelOutput};
