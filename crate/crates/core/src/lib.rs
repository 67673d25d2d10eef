//! Sensor transformation attention networks.
//!
//! Multi-sensor sequence models where every sensor gets its own transform
//! and attention layers, the sensors are merged by a per-frame softmax over
//! attention scores, and a recurrent classification stack is trained with
//! CTC. Includes the bounded random-walk noise used for training, synthetic
//! corpora, checkpoints and front-end grafting between trained models.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod corpus;
pub mod ctc;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod sequence;
pub mod train;

pub use error::{Error, Result};
pub use rng::Prng;
pub use sequence::{FeatureSequence, Label, LabelSequence, Sample, BLANK};
