//! Guided thermal super-resolution.
//!
//! A low-resolution thermal image is upscaled x8 with the help of a registered
//! high-resolution RGB guide. The model is a U-Net with two independent
//! encoders whose feature pyramids are fused by element-wise maximum before
//! entering the decoder skip connections; two small projection heads on the
//! encoder bottlenecks drive a contrastive regularizer. Either encoder can be
//! dropped at inference time, which keeps the network usable when one of the
//! two modalities is missing.
//!
//! Crate layout:
//! - [`data`]: image tensors, synthetic paired datasets, x8 degradation,
//!   flips, normalization, on-disk formats.
//! - [`autodiff`]: the reverse-mode tape every differentiable computation
//!   runs on.
//! - [`model`]: encoders, max fusion, decoder, projection heads, checkpoints.
//! - [`losses`]: MSE, PSNR, SSIM and contrastive losses plus the weighted
//!   training objective.
//! - [`metrics`]: quantized (0-255 integer) SSIM/PSNR evaluation and reports.
//! - [`trainer`]: Adam training loop, logging, beta sweeps.

pub mod autodiff;
pub mod data;
pub(crate) mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use data::{DataError, DatasetManifest, ImageTensor, SamplePair, Split};
pub use losses::{LossBreakdown, LossError, LossWeights, SsimConstants, SsimMode};
pub use metrics::{InferencePath, MetricsError, MetricsReport, QuantizedImage};
pub use model::{
    EncoderKind, FeaturePyramid, Model, ModelConfig, ModelError, OutputActivation, Parameters,
    Projection,
};
pub use trainer::{TrainConfig, TrainError, TrainLog};
