//! Parameter directories: one VSEG1 blob per tensor plus a text manifest of
//! `name dtype extents checksum` lines.

use std::path::Path;

use voxelgate_core::metrics::CLASS_NAMES;
use voxelgate_core::unet::{ModelParams, UNetConfig};
use voxelgate_core::Tensor;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::vseg::{self, Array};

pub const MANIFEST: &str = "manifest.txt";

fn extents_str(e: &[usize]) -> String {
    e.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Writes every tensor of `params` to `dir` (created if missing).
pub fn save_params(dir: &Path, params: &ModelParams<f32>) -> Result<()> {
    fsutil::create_dir_all(dir)?;
    let mut manifest = String::from("# voxelgate parameters: name dtype extents sha256\n");
    for (i, name) in CLASS_NAMES.iter().enumerate() {
        manifest.push_str(&format!("# class {i} = {name}\n"));
    }
    for (name, t) in params.iter() {
        let bytes = vseg::encode(&Array::F32(t.clone()))?;
        fsutil::write_atomic(&dir.join(format!("{name}.vseg")), &bytes)?;
        manifest.push_str(&format!("{name} f32 {} {}\n", extents_str(t.extents()), fsutil::sha256_hex(&bytes)));
    }
    fsutil::write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Loads a parameter directory, verifying every checksum and extent. With
/// `cfg`, the tensor set must also match that model layout exactly.
pub fn load_params(dir: &Path, cfg: Option<&UNetConfig>) -> Result<ModelParams<f32>> {
    let text = fsutil::read_to_string(&dir.join(MANIFEST))?;
    let mismatch = |m: String| Error::ManifestMismatch(m);
    let mut params = ModelParams::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [name, dtype, ext, sum] = f[..] else {
            return Err(mismatch(format!("line {}: expected 4 fields, got {}", ln + 1, f.len())));
        };
        if dtype != "f32" {
            return Err(mismatch(format!("{name}: unsupported dtype {dtype}")));
        }
        let path = dir.join(format!("{name}.vseg"));
        if !path.is_file() {
            return Err(mismatch(format!("{name}: listed in manifest but {} is missing", path.display())));
        }
        let bytes = fsutil::read(&path)?;
        if fsutil::sha256_hex(&bytes) != sum {
            return Err(mismatch(format!("{name}: checksum differs from manifest")));
        }
        let t: Tensor<f32> = vseg::decode(&bytes).map_err(|e| e.in_file(&path))?.into_f32()?;
        if extents_str(t.extents()) != ext {
            return Err(mismatch(format!("{name}: extents {:?} differ from manifest {ext}", t.extents())));
        }
        params.insert(name, t);
    }
    if let Some(cfg) = cfg {
        params.audit(cfg).map_err(|e| mismatch(format!("parameters do not fit the model config: {e}")))?;
    }
    Ok(params)
}
