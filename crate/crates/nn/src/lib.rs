//! Minimal dense-tensor core with reverse-mode differentiation.
//!
//! Covers exactly the operations the EMG encoder needs: linear maps, strided
//! 1-D convolution, batch and layer normalization, ReLU, softmax,
//! multi-head self-attention, MSE and cross-entropy losses, plus AdamW and a
//! binary32 checkpoint format. Training math runs in binary64.

pub mod check;
mod encoding;
mod error;
mod gemm;
mod graph;
mod optim;
mod params;
mod rng;
mod tensor;

pub use encoding::positional_encoding;
pub use error::{NnError, Result};
pub use graph::{softmax, BatchStats, BnMode, Gradients, Graph, RunningStats, Var};
pub use graph::conv_output_len;
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use params::{
    kaiming_uniform, load_params, save_params, Manifest, ManifestEntry, ParamEntry, ParamId,
    ParamKind, ParamStore, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use rng::{derive_seed, seeded_rng, stable_hash, Rng, RngAlgorithm, RngState};
pub use tensor::Tensor;
