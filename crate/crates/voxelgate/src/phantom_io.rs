//! Writes phantom cases as NIfTI case directories.

use std::path::{Path, PathBuf};

use voxelgate_core::phantom::{self, PhantomCase, PhantomSpec};
use voxelgate_core::Tensor;

use crate::error::Result;
use crate::fsutil;
use crate::nifti::{self, Datatype};

pub const SPACING: [f32; 3] = [1.0, 1.0, 1.0];

/// `(path, sha256)` of every written file.
pub type Manifest = Vec<(PathBuf, String)>;

/// Writes `{root}/{id}/{id}_{flair,t1ce,t2,seg}.nii.gz`.
pub fn write_case(root: &Path, case: &PhantomCase) -> Result<Manifest> {
    let dir = root.join(&case.case_id);
    let e = case.flair.extents().to_vec();
    let seg = Tensor::new(&e, case.seg.iter().map(|&v| v as f64).collect())?;
    let vols: [(&str, Tensor<f64>, Datatype); 4] = [
        ("flair", to_f64(&case.flair), Datatype::F32),
        ("t1ce", to_f64(&case.t1ce), Datatype::F32),
        ("t2", to_f64(&case.t2), Datatype::F32),
        ("seg", seg, Datatype::U8),
    ];
    let mut manifest = Vec::new();
    for (suffix, data, dt) in vols {
        let path = dir.join(format!("{}_{suffix}.nii.gz", case.case_id));
        let bytes = nifti::gzip(&nifti::encode(&data, dt, SPACING)?)?;
        fsutil::write_atomic(&path, &bytes)?;
        manifest.push((path, fsutil::sha256_hex(&bytes)));
    }
    Ok(manifest)
}

fn to_f64(t: &Tensor<f32>) -> Tensor<f64> {
    Tensor::new(t.extents(), t.values().iter().map(|&v| v as f64).collect()).expect("same extents")
}

/// Generates `n` phantoms from `spec` and writes them under `root`.
pub fn generate_to_dir(root: &Path, spec: &PhantomSpec, n: usize) -> Result<Manifest> {
    let mut manifest = Vec::new();
    for case in phantom::generate_phantoms(spec, n)? {
        manifest.extend(write_case(root, &case)?);
    }
    Ok(manifest)
}
