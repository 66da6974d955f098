//! Slice-level 3D kernels shared by the autodiff tape.
//!
//! All kernels operate on `(N, C, D, H, W)` buffers and partition work by
//! whole output planes, so each output element is produced by exactly one
//! sequential loop regardless of how many workers run.

pub mod conv;
pub mod pool;
pub mod upsample;

pub use conv::ConvGeom;

/// Runs `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of `data`.
pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}
