//! Variational autoencoders for unsupervised anomaly detection and
//! localization.
//!
//! The crate trains fully-connected Gaussian VAEs with a small reverse-mode
//! autodiff engine, scores whole images by the ELBO and its two terms, and
//! scores individual pixels by the reconstruction error and by input-space
//! gradients of the ELBO, the KL-term and the reconstruction term.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod scoring;
pub mod train;
pub mod vae;

pub use autodiff::{Graph, Tensor, Var};
pub use data::{AnomalyCorpus, ImageDataset, SplitTag};
pub use error::{Error, Result};
pub use eval::{LabeledScores, SweepPoint};
pub use scoring::{PixelMethod, PixelScoreMap, SampleScores, ScoreReport};
pub use train::{AdamState, TrainConfig};
pub use vae::{Posterior, VaeConfig, VaeParams};
