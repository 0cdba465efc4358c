//! Change detection on coregistered image pairs with fully convolutional
//! networks trained from scratch.
//!
//! The crate provides a small dense tensor type with reverse-mode
//! differentiation ([`autograd`]), the early-fusion and Siamese networks
//! ([`arch`]), dataset ingestion and augmentation ([`data`]), a training
//! loop with checkpointing ([`train`]) and full-image inference with the
//! usual change-class metrics ([`eval`]).

pub mod arch;
pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use arch::{ArchitectureKind, Mode, Network};
pub use error::{Error, ErrorKind, Result};
pub use params::{ParamId, ParamStore};
pub use rng::RngState;
pub use tensor::{Shape, Tensor};
