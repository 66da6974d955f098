//! Axial slice overlays as binary PPM images.

use voxelgate_core::{LabelVolume, Tensor};

use crate::error::{Error, Result};

/// Overlay color per class; background keeps the grayscale FLAIR value.
pub const COLORS: [[u8; 3]; 3] = [[0, 0, 255], [218, 165, 32], [0, 128, 0]];

/// Packed RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Pixmap {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary P6 encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

fn gray(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Slice `k` along the last axis: rows follow the first axis, columns the
/// second. `image` is the `(3, L, W, S)` stack with FLAIR in channel 0.
fn panel(image: &Tensor<f32>, labels: &LabelVolume, k: usize) -> Pixmap {
    let [_, l, w, s] = image.extents()[..] else { unreachable!("checked by caller") };
    let mut rgb = Vec::with_capacity(3 * l * w);
    for i in 0..l {
        for j in 0..w {
            let v = (i * w + j) * s + k;
            let px = match labels.values()[v] {
                0 => [gray(image.values()[v]); 3],
                c => COLORS[c as usize - 1],
            };
            rgb.extend_from_slice(&px);
        }
    }
    Pixmap { width: w, height: l, rgb }
}

/// Renders one axial slice. With `truth`, the ground-truth panel sits on the
/// left and the prediction on the right.
pub fn render_slice(image: &Tensor<f32>, truth: Option<&LabelVolume>, pred: &LabelVolume, k: usize) -> Result<Pixmap> {
    let [3, l, w, s] = image.extents()[..] else {
        return Err(Error::Data(format!("expected a (3, L, W, S) image, got {:?}", image.extents())));
    };
    for lv in truth.into_iter().chain([pred]) {
        if lv.extents() != [l, w, s] {
            return Err(voxelgate_core::Error::ShapeMismatch(format!(
                "labels {:?} vs image {:?}",
                lv.extents(),
                [l, w, s]
            ))
            .into());
        }
    }
    if k >= s {
        return Err(Error::SliceOutOfRange { index: k, extent: s });
    }
    let right = panel(image, pred, k);
    let Some(t) = truth else { return Ok(right) };
    let left = panel(image, t, k);
    let mut rgb = Vec::with_capacity(2 * right.rgb.len());
    for y in 0..l {
        rgb.extend_from_slice(&left.rgb[3 * y * w..3 * (y + 1) * w]);
        rgb.extend_from_slice(&right.rgb[3 * y * w..3 * (y + 1) * w]);
    }
    Ok(Pixmap { width: 2 * w, height: l, rgb })
}
