//! Gaze-ordered world-model pretraining.
//!
//! An online patch encoder, a fixation embedder and a causal predictor learn
//! to predict, in representation space, the next patch a reader fixates and
//! the representations of patches they never looked at. Targets come from an
//! EMA copy of the encoder. The crate also carries the evaluation side: a
//! linear probe over frozen features, a supervised scanpath decoder, and
//! scanpath similarity metrics.

pub mod gazedata;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod probes;
pub mod train;

pub use gazedata::{FixationRecord, FixationSequence, GridSpec, ImageGray, OrderRule, SyntheticDataset};
pub use metrics::{QuantizedScanpath, Scanpath};
pub use model::{Checkpoint, Model, ModelConfig};
pub use numcore::{ParamStore, Tape, Tensor};
pub use train::{TrainConfig, TrainReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
