//! Articulatory-feature prediction from multichannel surface EMG.
//!
//! The pipeline runs [`signal_prep`] on raw recordings, pairs them with
//! frame-rate targets from [`feature_targets`], trains the convolutional +
//! Transformer encoder of [`model`] with [`trainer`], scores it with
//! [`eval_metrics`] and probes electrode importance with [`ablation`].
//! [`synth_data`] generates corpora whose channel-to-feature dependencies
//! are known exactly.

pub mod ablation;
pub mod corpus;
pub mod error;
pub mod eval_metrics;
pub mod feature_targets;
pub mod figures;
pub mod model;
pub mod signal_prep;
pub mod synth_data;
pub mod trainer;

pub use error::{CoreError, Result};
