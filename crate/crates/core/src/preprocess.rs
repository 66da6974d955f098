//! Array-level preprocessing: per-modality min-max scaling, modality
//! stacking, content cropping, label remapping, the near-empty-mask filter
//! and the 6:2:2 dataset split.
//!
//! Stacked images are `(3, L, W, S)` with channel order FLAIR, T1CE, T2.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{LabelVolume, Real, Tensor};

pub const CHANNEL_ORDER: [&str; 3] = ["FLAIR", "T1CE", "T2"];
/// Cases whose non-background fraction falls below this are dropped.
pub const MIN_MASK_FRACTION: f64 = 0.01;

fn rank3(v: &Tensor<impl Real>) -> Result<[usize; 3]> {
    match *v.extents() {
        [a, b, c] => Ok([a, b, c]),
        ref e => Err(Error::ShapeMismatch(format!("expected a rank-3 volume, got {e:?}"))),
    }
}

/// `(v − min) / (max − min)`; a constant volume maps to zeros.
pub fn minmax_scale<T: Real>(volume: &Tensor<T>) -> Result<Tensor<T>> {
    rank3(volume)?;
    if !volume.all_finite() {
        return Err(Error::NonFiniteInput);
    }
    let (lo, hi) = volume
        .values()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if volume.is_empty() || hi <= lo {
        return Ok(Tensor::zeros(volume.extents()));
    }
    let range = hi - lo;
    // clamp guards the last ulp so outputs stay inside [0, 1]
    Ok(volume.map(|v| ((v - lo) / range).max(T::zero()).min(T::one())))
}

/// Stacks three equally sized volumes into `(3, L, W, S)`.
pub fn stack_modalities<T: Real>(flair: &Tensor<T>, t1ce: &Tensor<T>, t2: &Tensor<T>) -> Result<Tensor<T>> {
    let e = rank3(flair)?;
    for (name, v) in [("T1CE", t1ce), ("T2", t2)] {
        if rank3(v)? != e {
            return Err(Error::ShapeMismatch(format!(
                "{name} extents {:?} differ from FLAIR {:?}",
                v.extents(),
                e
            )));
        }
    }
    let mut values = Vec::with_capacity(3 * flair.len());
    for v in [flair, t1ce, t2] {
        values.extend_from_slice(v.values());
    }
    Tensor::new(&[3, e[0], e[1], e[2]], values)
}

/// Half-open spatial box `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CropBox {
    pub fn full(extents: [usize; 3]) -> Self {
        Self { lo: [0; 3], hi: extents }
    }

    /// `(lo0, hi0, lo1, hi1, lo2, hi2)`.
    pub fn as_array(&self) -> [usize; 6] {
        [self.lo[0], self.hi[0], self.lo[1], self.hi[1], self.lo[2], self.hi[2]]
    }

    pub fn from_array(a: [usize; 6]) -> Self {
        Self { lo: [a[0], a[2], a[4]], hi: [a[1], a[3], a[5]] }
    }

    pub fn extents(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.hi[i].saturating_sub(self.lo[i]))
    }

    fn check(&self, extents: [usize; 3]) -> Result<()> {
        for i in 0..3 {
            if self.lo[i] >= self.hi[i] || self.hi[i] > extents[i] {
                return Err(Error::BoxOutOfRange(format!("{self} exceeds extents {extents:?}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for CropBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.as_array();
        write!(f, "({},{},{},{},{},{})", a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

/// Smallest box holding every voxel where any channel exceeds `threshold`.
pub fn content_bounding_box<T: Real>(image: &Tensor<T>, threshold: T) -> Result<CropBox> {
    let [c, l, w, s] = match *image.extents() {
        [c, l, w, s] if c * l * w * s > 0 => [c, l, w, s],
        ref e => return Err(Error::ShapeMismatch(format!("expected a non-empty (C, L, W, S) image, got {e:?}"))),
    };
    let sp = l * w * s;
    let v = image.values();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for idx in 0..sp {
        if (0..c).any(|ch| v[ch * sp + idx] > threshold) {
            let p = [idx / (w * s), (idx / s) % w, idx % s];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a] + 1);
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::EmptyContent);
    }
    Ok(CropBox { lo, hi })
}

/// Preprocessed case: stacked image in `[0, 1]` plus optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCase {
    pub case_id: String,
    pub image: Tensor<f32>,
    pub labels: Option<LabelVolume>,
}

impl StackedCase {
    pub fn new(case_id: impl Into<String>, image: Tensor<f32>, labels: Option<LabelVolume>) -> Result<Self> {
        let case = Self { case_id: case_id.into(), image, labels };
        case.spatial()?;
        if let Some(l) = &case.labels {
            if l.extents() != case.spatial()? {
                return Err(Error::ShapeMismatch(format!(
                    "labels {:?} vs image {:?}",
                    l.extents(),
                    case.image.extents()
                )));
            }
        }
        Ok(case)
    }

    pub fn spatial(&self) -> Result<[usize; 3]> {
        match *self.image.extents() {
            [3, l, w, s] => Ok([l, w, s]),
            ref e => Err(Error::ShapeMismatch(format!("expected a (3, L, W, S) image, got {e:?}"))),
        }
    }
}

fn crop_channels<T: Copy>(values: &[T], channels: usize, extents: [usize; 3], b: &CropBox) -> Vec<T> {
    let [_, w, s] = extents;
    let sp = extents.iter().product::<usize>();
    let mut out = Vec::with_capacity(channels * b.extents().iter().product::<usize>());
    for ch in 0..channels {
        for i in b.lo[0]..b.hi[0] {
            for j in b.lo[1]..b.hi[1] {
                let row = ch * sp + (i * w + j) * s;
                out.extend_from_slice(&values[row + b.lo[2]..row + b.hi[2]]);
            }
        }
    }
    out
}

/// Crops image and labels with the same box.
pub fn crop_case(case: &StackedCase, b: &CropBox) -> Result<StackedCase> {
    let e = case.spatial()?;
    b.check(e)?;
    let ce = b.extents();
    let image = Tensor::new(&[3, ce[0], ce[1], ce[2]], crop_channels(case.image.values(), 3, e, b))?;
    let labels = match &case.labels {
        Some(l) => Some(LabelVolume::new(ce, crop_channels(l.values(), 1, e, b))?),
        None => None,
    };
    StackedCase::new(case.case_id.clone(), image, labels)
}

/// Zero-pads a case on the high side of each axis up to `extents`.
pub fn pad_case(case: &StackedCase, extents: [usize; 3]) -> Result<StackedCase> {
    let e = case.spatial()?;
    if (0..3).any(|a| extents[a] < e[a]) {
        return Err(Error::BoxOutOfRange(format!("cannot pad {e:?} down to {extents:?}")));
    }
    let sp_in: usize = e.iter().product();
    let sp_out: usize = extents.iter().product();
    let mut image = alloc::vec![0.0f32; 3 * sp_out];
    let mut labels = case.labels.as_ref().map(|_| alloc::vec![0u8; sp_out]);
    for ch in 0..3 {
        for i in 0..e[0] {
            for j in 0..e[1] {
                let src = ch * sp_in + (i * e[1] + j) * e[2];
                let dst = ch * sp_out + (i * extents[1] + j) * extents[2];
                image[dst..dst + e[2]].copy_from_slice(&case.image.values()[src..src + e[2]]);
                if ch == 0 {
                    if let (Some(out), Some(l)) = (labels.as_mut(), case.labels.as_ref()) {
                        out[dst..dst + e[2]].copy_from_slice(&l.values()[src..src + e[2]]);
                    }
                }
            }
        }
    }
    let labels = match labels {
        Some(v) => Some(LabelVolume::new(extents, v)?),
        None => None,
    };
    StackedCase::new(case.case_id.clone(), Tensor::new(&[3, extents[0], extents[1], extents[2]], image)?, labels)
}

/// Raw-label → class table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub pairs: Vec<(i64, u8)>,
}

impl Default for LabelMap {
    /// `0→0, 1→1, 2→2, 4→3`.
    fn default() -> Self {
        Self { pairs: alloc::vec![(0, 0), (1, 1), (2, 2), (4, 3)] }
    }
}

impl LabelMap {
    pub fn lookup(&self, raw: i64) -> Result<u8> {
        self.pairs
            .iter()
            .find(|(r, _)| *r == raw)
            .map(|&(_, c)| c)
            .ok_or(Error::UnexpectedLabel(raw))
    }
}

pub fn remap_labels(extents: [usize; 3], raw: &[i64], map: &LabelMap) -> Result<LabelVolume> {
    let values = raw.iter().map(|&r| map.lookup(r)).collect::<Result<Vec<u8>>>()?;
    LabelVolume::new(extents, values)
}

/// Fraction of voxels carrying a non-background label.
pub fn mask_fraction(labels: &LabelVolume) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.values().iter().filter(|&&v| v != 0).count() as f64 / labels.len() as f64
}

/// Keep-if-≥ rule: exactly 1% is retained.
pub fn passes_mask_filter(fraction: f64) -> bool {
    fraction >= MIN_MASK_FRACTION
}

/// Result of [`preprocess_arrays`].
#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessed {
    Retained { case: StackedCase, crop: CropBox, mask_fraction: Option<f64> },
    Filtered { crop: CropBox, mask_fraction: f64 },
}

/// Scale each modality, stack, remap labels, crop to image content, then
/// drop the case when its cropped mask covers less than 1% of voxels.
pub fn preprocess_arrays(
    case_id: &str,
    flair: &Tensor<f32>,
    t1ce: &Tensor<f32>,
    t2: &Tensor<f32>,
    raw_labels: Option<&[i64]>,
    map: &LabelMap,
) -> Result<Preprocessed> {
    let image = stack_modalities(&minmax_scale(flair)?, &minmax_scale(t1ce)?, &minmax_scale(t2)?)?;
    let e = rank3(flair)?;
    let labels = match raw_labels {
        Some(raw) => Some(remap_labels(e, raw, map)?),
        None => None,
    };
    let case = StackedCase::new(case_id, image, labels)?;
    let crop = content_bounding_box(&case.image, 0.0)?;
    let cropped = crop_case(&case, &crop)?;
    let fraction = cropped.labels.as_ref().map(mask_fraction);
    match fraction {
        Some(f) if !passes_mask_filter(f) => Ok(Preprocessed::Filtered { crop, mask_fraction: f }),
        _ => Ok(Preprocessed::Retained { case: cropped, crop, mask_fraction: fraction }),
    }
}

/// Train / validation / test case ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Seeded shuffle, then `⌊0.6n⌋` train, `⌊0.2n⌋` validation, remainder test.
pub fn split_dataset(case_ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if case_ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    for id in case_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateIds(id.clone()));
        }
    }
    let mut ids = case_ids.to_vec();
    ids.shuffle(&mut rng::stream(seed, "split", 0));
    let n = ids.len();
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, validation, test, seed })
}
