//! File-level preprocessing: NIfTI case directories in, VSEG1 arrays out.

use std::path::{Path, PathBuf};

use voxelgate_core::preprocess::{self, CropBox, LabelMap, Preprocessed, StackedCase, CHANNEL_ORDER};
use voxelgate_core::{LabelVolume, Tensor};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nifti;
use crate::vseg::{self, Array, Sidecar};

const MODALITIES: [&str; 3] = ["flair", "t1ce", "t2"];

/// Source files of one case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiModalCase {
    pub case_id: String,
    pub flair: PathBuf,
    pub t1ce: PathBuf,
    pub t2: PathBuf,
    pub seg: Option<PathBuf>,
}

fn find_modality(dir: &Path, id: &str, suffix: &str) -> Option<PathBuf> {
    ["nii", "nii.gz"]
        .iter()
        .map(|ext| dir.join(format!("{id}_{suffix}.{ext}")))
        .find(|p| p.is_file())
}

impl MultiModalCase {
    /// Locates `{id}_{flair,t1ce,t2,seg}.nii[.gz]` inside `dir`, where `id`
    /// is the directory name. The segmentation is optional.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("{}: not a case directory", dir.display())))?
            .to_string();
        let need = |m: &str| {
            find_modality(dir, &id, m).ok_or_else(|| Error::Data(format!("{id}: missing {m} volume in {}", dir.display())))
        };
        Ok(Self {
            flair: need(MODALITIES[0])?,
            t1ce: need(MODALITIES[1])?,
            t2: need(MODALITIES[2])?,
            seg: find_modality(dir, &id, "seg"),
            case_id: id,
        })
    }

    fn sources(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("flair", self.flair.as_path()), ("t1ce", self.t1ce.as_path()), ("t2", self.t2.as_path())];
        if let Some(s) = &self.seg {
            v.push(("seg", s.as_path()));
        }
        v
    }
}

/// Case directories directly under `root`, sorted by name.
pub fn case_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn raw_labels(v: &nifti::NiftiVolume) -> Result<Vec<i64>> {
    v.data
        .values()
        .iter()
        .map(|&x| {
            if x.fract() == 0.0 {
                Ok(x as i64)
            } else {
                Err(Error::Data(format!("non-integer segmentation value {x}")))
            }
        })
        .collect()
}

/// Outcome of [`preprocess_case`] plus the provenance recorded in sidecars.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub case_id: String,
    pub result: Preprocessed,
    /// `(modality, sha256)` of every source file.
    pub checksums: Vec<(String, String)>,
}

impl CaseOutcome {
    pub fn retained(&self) -> Option<&StackedCase> {
        match &self.result {
            Preprocessed::Retained { case, .. } => Some(case),
            Preprocessed::Filtered { .. } => None,
        }
    }
}

/// Reads the NIfTI files of a case and runs the preprocessing chain.
pub fn preprocess_case(case: &MultiModalCase, map: &LabelMap) -> Result<CaseOutcome> {
    let mut checksums = Vec::new();
    let mut vols = Vec::new();
    for (name, path) in case.sources() {
        let bytes = fsutil::read(path)?;
        checksums.push((name.to_string(), fsutil::sha256_hex(&bytes)));
        vols.push(nifti::decode(&bytes).map_err(|e| e.in_file(path))?);
    }
    let img: Vec<Tensor<f32>> = vols[..3].iter().map(|v| v.to_f32()).collect();
    let raw = vols.get(3).map(raw_labels).transpose()?;
    if let Some(seg) = vols.get(3) {
        if seg.extents() != vols[0].extents() {
            return Err(Error::Core(voxelgate_core::Error::ShapeMismatch(format!(
                "{}: segmentation {:?} vs image {:?}",
                case.case_id,
                seg.extents(),
                vols[0].extents()
            ))));
        }
    }
    let result = preprocess::preprocess_arrays(&case.case_id, &img[0], &img[1], &img[2], raw.as_deref(), map)?;
    Ok(CaseOutcome { case_id: case.case_id.clone(), result, checksums })
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.image.vseg"))
}

pub fn labels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.labels.vseg"))
}

pub fn meta_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.meta"))
}

fn sidecar(outcome: &CaseOutcome) -> Sidecar {
    let mut m = Sidecar::new();
    m.insert("case_id".into(), outcome.case_id.clone());
    m.insert("channel_order".into(), CHANNEL_ORDER.join(","));
    let (crop, fraction, status): (&CropBox, Option<f64>, &str) = match &outcome.result {
        Preprocessed::Retained { crop, mask_fraction, .. } => (crop, *mask_fraction, "retained"),
        Preprocessed::Filtered { crop, mask_fraction } => (crop, Some(*mask_fraction), "filtered"),
    };
    m.insert("status".into(), status.into());
    m.insert("crop_box".into(), crop.to_string());
    if let Some(f) = fraction {
        m.insert("mask_fraction".into(), format!("{f}"));
    }
    for (k, v) in &outcome.checksums {
        m.insert(format!("source.{k}.sha256"), v.clone());
    }
    m
}

/// Writes the sidecar and, for retained cases, the image and label arrays.
pub fn persist(dir: &Path, outcome: &CaseOutcome) -> Result<()> {
    if let Some(case) = outcome.retained() {
        vseg::write(&image_path(dir, &case.case_id), &Array::F32(case.image.clone()))?;
        if let Some(l) = &case.labels {
            vseg::write(&labels_path(dir, &case.case_id), &Array::from(l))?;
        }
    }
    fsutil::write_atomic(&meta_path(dir, &outcome.case_id), vseg::format_sidecar(&sidecar(outcome)).as_bytes())
}

/// True when `dir` already holds outputs produced from byte-identical sources.
pub fn is_cached(dir: &Path, case: &MultiModalCase) -> Result<bool> {
    let meta = meta_path(dir, &case.case_id);
    if !meta.is_file() {
        return Ok(false);
    }
    let m = vseg::parse_sidecar(&fsutil::read_to_string(&meta)?)?;
    for (name, path) in case.sources() {
        let sum = fsutil::sha256_hex(&fsutil::read(path)?);
        if m.get(&format!("source.{name}.sha256")) != Some(&sum) {
            return Ok(false);
        }
    }
    let retained = m.get("status").map(String::as_str) == Some("retained");
    Ok(!retained || image_path(dir, &case.case_id).is_file())
}

pub fn read_meta(dir: &Path, id: &str) -> Result<Sidecar> {
    vseg::parse_sidecar(&fsutil::read_to_string(&meta_path(dir, id))?)
}

/// Ids of retained cases in a preprocessed directory, sorted.
pub fn retained_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let Some(id) = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".meta")) else {
            continue;
        };
        if read_meta(dir, id)?.get("status").map(String::as_str) == Some("retained") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads a persisted case.
pub fn load_stacked(dir: &Path, id: &str) -> Result<StackedCase> {
    let image = vseg::read(&image_path(dir, id))?.into_f32()?;
    let lp = labels_path(dir, id);
    let labels: Option<LabelVolume> = if lp.is_file() { Some(vseg::read(&lp)?.into_labels()?) } else { None };
    Ok(StackedCase::new(id, image, labels)?)
}

/// Reads the crop box recorded for a case.
pub fn crop_of(meta: &Sidecar) -> Result<CropBox> {
    let s = meta.get("crop_box").ok_or_else(|| Error::Data("sidecar lacks crop_box".into()))?;
    let nums: Vec<usize> = s
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Data(format!("malformed crop_box {s}")))?;
    let a: [usize; 6] = nums.try_into().map_err(|_| Error::Data(format!("malformed crop_box {s}")))?;
    Ok(CropBox::from_array(a))
}
