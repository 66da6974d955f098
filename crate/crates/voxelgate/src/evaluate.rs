//! Inference and split-level metrics.

use voxelgate_core::metrics::{self, CaseMetrics, MetricsReport, TverskyWeights, CLASS_NAMES, DEFAULT_SMOOTH};
use voxelgate_core::preprocess::{self, CropBox, StackedCase};
use voxelgate_core::unet::{self, Mode, ModelParams, UNetConfig};
use voxelgate_core::{LabelVolume, Tensor};

use crate::error::{Error, Result};

/// Argmax labels and `(4, L, W, S)` class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelVolume,
    pub probs: Tensor<f32>,
}

/// Anything that turns a stacked case into a label volume.
pub trait Segmenter {
    fn segment(&self, case: &StackedCase) -> Result<LabelVolume>;
}

/// A trained U-Net.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: UNetConfig,
    pub params: ModelParams<f32>,
}

impl Model {
    pub fn divisor(&self) -> usize {
        1 << self.config.depth
    }

    /// Eval-mode inference. Every spatial extent must be divisible by
    /// `2^depth`.
    pub fn predict_case(&self, case: &StackedCase) -> Result<Prediction> {
        let [l, w, s] = case.spatial()?;
        let d = self.divisor();
        if let Some(&extent) = [l, w, s].iter().find(|&&e| e % d != 0) {
            return Err(voxelgate_core::Error::IndivisibleExtent { extent, divisor: d }.into());
        }
        let x = case.image.clone().reshape(&[1, 3, l, w, s])?;
        let fp = unet::forward(&self.config, &self.params, &x, Mode::Eval)?;
        let probs = fp.graph.value(fp.probs).clone().reshape(&[metrics::NUM_CLASSES, l, w, s])?;
        if !probs.values().iter().all(|v| v.is_finite()) {
            return Err(voxelgate_core::Error::NonFiniteInput.into());
        }
        Ok(Prediction { labels: metrics::argmax_labels(&probs)?, probs })
    }

    /// Zero-pads the case up to the next multiple of `2^depth`, predicts,
    /// and crops the result back to the original extents.
    pub fn predict_padded(&self, case: &StackedCase) -> Result<Prediction> {
        let e = case.spatial()?;
        let padded = padded_extents(e, self.divisor());
        if padded == e {
            return self.predict_case(case);
        }
        let p = self.predict_case(&preprocess::pad_case(case, padded)?)?;
        let b = CropBox { lo: [0; 3], hi: e };
        let labels = LabelVolume::new(e, crop_channels(p.labels.values(), 1, padded, &b))?;
        let probs = Tensor::new(
            &[metrics::NUM_CLASSES, e[0], e[1], e[2]],
            crop_channels(p.probs.values(), metrics::NUM_CLASSES, padded, &b),
        )?;
        Ok(Prediction { labels, probs })
    }
}

impl Segmenter for Model {
    fn segment(&self, case: &StackedCase) -> Result<LabelVolume> {
        Ok(self.predict_padded(case)?.labels)
    }
}

fn crop_channels<T: Copy>(values: &[T], channels: usize, e: [usize; 3], b: &CropBox) -> Vec<T> {
    let sp = e.iter().product::<usize>();
    let mut out = Vec::with_capacity(channels * b.extents().iter().product::<usize>());
    for c in 0..channels {
        for i in b.lo[0]..b.hi[0] {
            for j in b.lo[1]..b.hi[1] {
                let row = c * sp + (i * e[1] + j) * e[2];
                out.extend_from_slice(&values[row + b.lo[2]..row + b.hi[2]]);
            }
        }
    }
    out
}

/// Each extent rounded up to a multiple of `divisor`.
pub fn padded_extents(e: [usize; 3], divisor: usize) -> [usize; 3] {
    e.map(|x| x.div_ceil(divisor) * divisor)
}

/// Per-case metrics, in input order, and their aggregate.
pub fn evaluate_cases(
    seg: &dyn Segmenter,
    cases: &[StackedCase],
    w: TverskyWeights,
) -> Result<(Vec<CaseMetrics>, MetricsReport)> {
    let per_case = cases
        .iter()
        .map(|c| {
            let truth = c
                .labels
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{}: no ground truth to evaluate against", c.case_id)))?;
            let pred = seg.segment(c)?;
            Ok(CaseMetrics::compute(&c.case_id, &pred, truth, w, DEFAULT_SMOOTH)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_cases(&per_case, w, DEFAULT_SMOOTH)?;
    Ok((per_case, report))
}

/// Plain-text table with one row per trial: Dice and Tversky loss, then the
/// per-class Dice scores.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).chain([5]).max().unwrap_or(5);
    let mut out = format!("{:<width$}  {:>6}  {:>13}", "Trial", "Dice", "Tversky Loss");
    for name in &CLASS_NAMES[1..] {
        out.push_str(&format!("  {:>10}", format!("Dice/{name}")));
    }
    out.push_str(&format!("  {:>5}\n", "cases"));
    for (name, r) in rows {
        out.push_str(&format!("{name:<width$}  {:>6.4}  {:>13.4}", r.mean_dice, r.mean_tversky_loss));
        for s in &r.per_class {
            out.push_str(&format!("  {:>10.4}", s.dice));
        }
        out.push_str(&format!("  {:>5}\n", r.n_cases));
    }
    out
}

/// CSV with one row per case plus a final `mean` row.
pub fn format_csv(per_case: &[CaseMetrics], report: &MetricsReport) -> String {
    let mut out = String::from("case_id,dice,tversky_loss");
    for name in &CLASS_NAMES[1..] {
        out.push_str(&format!(",dice_{name},tversky_index_{name}"));
    }
    out.push('\n');
    let row = |out: &mut String, id: &str, d: f64, tl: f64, s: &[metrics::ClassScores; 3]| {
        out.push_str(&format!("{id},{d},{tl}"));
        for c in s {
            out.push_str(&format!(",{},{}", c.dice, c.tversky_index));
        }
        out.push('\n');
    };
    for c in per_case {
        row(&mut out, &c.case_id, c.mean_dice(), c.mean_tversky_loss(), &c.scores);
    }
    row(&mut out, "mean", report.mean_dice, report.mean_tversky_loss, &report.per_class);
    out
}
