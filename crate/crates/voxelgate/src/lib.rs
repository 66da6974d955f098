//! File formats, preprocessing, training and evaluation on top of
//! `voxelgate-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fsutil;
pub mod nifti;
pub mod params_io;
pub mod phantom_io;
pub mod pipeline;
pub mod render;
pub mod trainer;
pub mod vseg;

pub use error::{Error, ExitKind, Result};
