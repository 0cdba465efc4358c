//! The three fully convolutional change-detection networks.

mod kind;
mod layers;
mod network;

pub use kind::ArchitectureKind;
pub use network::{Block, ForwardTrace, Mode, Network, DEFAULT_BLOCKS, DEFAULT_DROPOUT, SIZE_MULTIPLE, STAGES};
