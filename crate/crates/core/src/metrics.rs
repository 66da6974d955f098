//! Overlap metrics for multi-class segmentation.
//!
//! Hard metrics work on integer label volumes; the differentiable soft
//! Tversky loss lives on the tape as [`Graph::soft_tversky_loss`].
//! Class 0 is background and never enters an average.
//!
//! [`Graph::soft_tversky_loss`]: crate::graph::Graph::soft_tversky_loss

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::LabelVolume;

pub const NUM_CLASSES: usize = 4;
/// Foreground classes: 1 necrosis, 2 edema, 3 enhancing tumor.
pub const FOREGROUND: [u8; 3] = [1, 2, 3];
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "necrosis", "edema", "enhancing"];
pub const DEFAULT_SMOOTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

impl ConfusionCounts {
    pub fn new(tp: f64, fn_: f64, fp: f64) -> Self {
        Self { tp, fn_, fp }
    }
}

impl core::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fn_: self.fn_ + o.fn_, fp: self.fp + o.fp }
    }
}

/// False-negative and false-positive weights of the Tversky index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TverskyWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TverskyWeights {
    fn default() -> Self {
        Self { alpha: 0.7, beta: 0.3 }
    }
}

impl TverskyWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0) {
            return Err(Error::InvalidConfig(format!("Tversky weights alpha={alpha}, beta={beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

/// How per-class soft losses combine into one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassReduction {
    #[default]
    Mean,
    Sum,
}

pub fn confusion_counts(pred: &LabelVolume, truth: &LabelVolume, cls: u8) -> Result<ConfusionCounts> {
    if pred.extents() != truth.extents() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.extents(),
            truth.extents()
        )));
    }
    if cls as usize >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange(cls));
    }
    let (mut tp, mut fn_, mut fp) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        if p as usize >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange(p));
        }
        if t as usize >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange(t));
        }
        match (p == cls, t == cls) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (true, false) => fp += 1,
            (false, false) => {}
        }
    }
    Ok(ConfusionCounts::new(tp as f64, fn_ as f64, fp as f64))
}

/// `2·tp / (2·tp + fn + fp)`, evaluated as `(tp + s) / (tp + fn/2 + fp/2 + s)`
/// so it is bit-identical to the Tversky index with `α = β = 0.5`.
pub fn dice(c: ConfusionCounts, smooth: f64) -> f64 {
    (c.tp + smooth) / (c.tp + 0.5 * c.fn_ + 0.5 * c.fp + smooth)
}

/// `(tp + s) / (tp + α·fn + β·fp + s)`.
pub fn tversky_index(c: ConfusionCounts, w: TverskyWeights, smooth: f64) -> f64 {
    (c.tp + smooth) / (c.tp + w.alpha * c.fn_ + w.beta * c.fp + smooth)
}

pub fn tversky_loss(c: ConfusionCounts, w: TverskyWeights, smooth: f64) -> f64 {
    1.0 - tversky_index(c, w, smooth)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScores {
    pub dice: f64,
    pub tversky_index: f64,
}

/// Scores of one case, one entry per foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    pub counts: [ConfusionCounts; 3],
    pub scores: [ClassScores; 3],
}

impl CaseMetrics {
    pub fn compute(
        case_id: &str,
        pred: &LabelVolume,
        truth: &LabelVolume,
        w: TverskyWeights,
        smooth: f64,
    ) -> Result<Self> {
        let mut counts = [ConfusionCounts::default(); 3];
        let mut scores = [ClassScores::default(); 3];
        for (i, &cls) in FOREGROUND.iter().enumerate() {
            let c = confusion_counts(pred, truth, cls)?;
            counts[i] = c;
            scores[i] = ClassScores { dice: dice(c, smooth), tversky_index: tversky_index(c, w, smooth) };
        }
        Ok(Self { case_id: case_id.into(), counts, scores })
    }

    pub fn mean_dice(&self) -> f64 {
        self.scores.iter().map(|s| s.dice).sum::<f64>() / 3.0
    }

    pub fn mean_tversky_loss(&self) -> f64 {
        self.scores.iter().map(|s| 1.0 - s.tversky_index).sum::<f64>() / 3.0
    }
}

/// Split-level summary. Headline numbers average per case, then over the
/// three foreground classes; the pooled variants sum counts over all cases
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: [ClassScores; 3],
    pub mean_dice: f64,
    pub mean_tversky_loss: f64,
    pub pooled_dice: f64,
    pub pooled_tversky_loss: f64,
    pub n_cases: usize,
    pub weights: TverskyWeights,
    pub smooth: f64,
}

impl MetricsReport {
    /// Aggregates cases in the given order.
    pub fn from_cases(cases: &[CaseMetrics], w: TverskyWeights, smooth: f64) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = cases.len() as f64;
        let mut per_class = [ClassScores::default(); 3];
        let mut pooled = [ConfusionCounts::default(); 3];
        for case in cases {
            for i in 0..3 {
                per_class[i].dice += case.scores[i].dice / n;
                per_class[i].tversky_index += case.scores[i].tversky_index / n;
                pooled[i] = pooled[i] + case.counts[i];
            }
        }
        let mean_dice = per_class.iter().map(|s| s.dice).sum::<f64>() / 3.0;
        let mean_tversky_loss = per_class.iter().map(|s| 1.0 - s.tversky_index).sum::<f64>() / 3.0;
        let pooled_dice = pooled.iter().map(|&c| dice(c, smooth)).sum::<f64>() / 3.0;
        let pooled_tversky_loss = pooled.iter().map(|&c| tversky_loss(c, w, smooth)).sum::<f64>() / 3.0;
        Ok(Self {
            per_class,
            mean_dice,
            mean_tversky_loss,
            pooled_dice,
            pooled_tversky_loss,
            n_cases: cases.len(),
            weights: w,
            smooth,
        })
    }
}

/// Per-voxel argmax over the channel axis of `(C, L, W, S)` probabilities.
/// Ties resolve to the lowest class index.
pub fn argmax_labels<T: crate::Real>(probs: &crate::Tensor<T>) -> Result<LabelVolume> {
    let e = probs.extents();
    if e.len() != 4 || e[0] == 0 || e[0] > u8::MAX as usize {
        return Err(Error::ShapeMismatch(format!("expected (C, L, W, S) probabilities, got {e:?}")));
    }
    let (c, sp) = (e[0], e[1] * e[2] * e[3]);
    let p = probs.values();
    let labels: Vec<u8> = (0..sp)
        .map(|v| {
            let mut best = 0;
            for k in 1..c {
                if p[k * sp + v] > p[best * sp + v] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new([e[1], e[2], e[3]], labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const W: TverskyWeights = TverskyWeights { alpha: 0.7, beta: 0.3 };

    #[test]
    fn dice_examples() {
        assert!((dice(ConfusionCounts::new(50.0, 0.0, 0.0), DEFAULT_SMOOTH) - 1.0).abs() < 1e-8);
        assert!((dice(ConfusionCounts::new(2.0, 1.0, 1.0), DEFAULT_SMOOTH) - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(dice(ConfusionCounts::default(), DEFAULT_SMOOTH), 1.0);
    }

    #[test]
    fn tversky_examples() {
        let c = ConfusionCounts::new(2.0, 1.0, 1.0);
        assert!((tversky_index(c, W, DEFAULT_SMOOTH) - 2.0 / 3.0).abs() < 1e-6);
        assert!((tversky_loss(c, W, DEFAULT_SMOOTH) - 1.0 / 3.0).abs() < 1e-6);
        let c = ConfusionCounts::new(10.0, 0.0, 5.0);
        assert!((tversky_index(c, W, DEFAULT_SMOOTH) - 10.0 / 11.5).abs() < 1e-6);
        assert_eq!(tversky_loss(ConfusionCounts::new(7.0, 0.0, 0.0), W, DEFAULT_SMOOTH), 0.0);
    }

    #[test]
    fn weights_validated() {
        assert!(TverskyWeights::new(0.0, 0.0).is_err());
        assert!(TverskyWeights::new(-0.1, 0.5).is_err());
        assert!(TverskyWeights::new(0.5, 0.5).is_ok());
    }

    #[test]
    fn counts_examples() {
        let truth = LabelVolume::new([1, 1, 4], vec![1, 1, 0, 2]).unwrap();
        let pred = LabelVolume::new([1, 1, 4], vec![1, 0, 1, 2]).unwrap();
        assert_eq!(confusion_counts(&pred, &truth, 1).unwrap(), ConfusionCounts::new(1.0, 1.0, 1.0));
        assert_eq!(confusion_counts(&pred, &truth, 2).unwrap(), ConfusionCounts::new(1.0, 0.0, 0.0));
        let bad = LabelVolume::new([1, 1, 4], vec![0, 0, 0, 7]).unwrap();
        assert_eq!(confusion_counts(&bad, &truth, 1), Err(Error::LabelOutOfRange(7)));
        let small = LabelVolume::zeros([1, 1, 3]);
        assert!(matches!(confusion_counts(&small, &truth, 1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn empty_report_rejected() {
        assert_eq!(MetricsReport::from_cases(&[], W, DEFAULT_SMOOTH), Err(Error::EmptyDataset));
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        let p = crate::Tensor::new(&[4, 1, 1, 2], vec![0.25, 0.1, 0.25, 0.2, 0.25, 0.3, 0.25, 0.4]).unwrap();
        assert_eq!(argmax_labels::<f64>(&p).unwrap().values(), &[0, 3]);
    }
}
