//! Numerical core of a volumetric brain-tumor segmentation toolkit.
//!
//! Everything in this crate is pure computation over owned buffers: a small
//! dense tensor type with a reverse-mode tape, the 3D kernels an attention
//! U-Net needs, the network itself, overlap metrics and losses, the Adam
//! optimizer, and the array-level parts of the preprocessing pipeline.
//! File formats, training orchestration and the command line live in the
//! `voxelgate` crate.
//!
//! The crate is `no_std` and only needs `alloc`. Enabling the `parallel`
//! feature partitions convolution work across a rayon pool; results are
//! bitwise identical for any worker count.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{LabelVolume, Real, Tensor};
