//! Vision transformer with a squeeze-and-excitation gate on the class token.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation:
//!
//! * [`tensor`] and [`tape`]: dense row-major tensors and a reverse-mode
//!   autodiff tape, with a central-difference checker in [`gradcheck`].
//! * [`vit`]: patch tokenization, multi-head self-attention and the pre-norm
//!   encoder stack producing the class-token feature.
//! * [`se`]: the excitation gate applied to the class token and the
//!   classifier head.
//! * [`train`], [`optim`], [`loss`], [`augment`]: the training recipe
//!   (cross-entropy, AdamW, Mixup, Cutout, colour jitter) and evaluation.
//! * [`data`]: in-memory datasets and a procedural face-like corpus.
//! * [`rollout`]: attention rollout over the encoder layers.
//!
//! File formats and the command line live in the `vitse` crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod params;
pub mod rollout;
pub mod sample;
pub mod scalar;
pub mod se;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vit;

pub use config::{AugmentConfig, NormConfig, TrainConfig, ViTConfig};
pub use error::{Error, Result};
pub use params::ModelParams;
pub use scalar::{DType, Element};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
