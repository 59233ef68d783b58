//! Segmentation metrics and joint-distance accuracy curves.

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::error::{bail, Result};
use crate::geometry::{LabelMap, SemanticLabel};

fn check_pair(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        bail!(
            DimensionMismatch,
            "prediction {}x{} vs truth {}x{}",
            pred.width,
            pred.height,
            truth.width,
            truth.height
        );
    }
    Ok(())
}

/// Share of pixels whose predicted label equals the truth.
pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.labels.is_empty() {
        return Ok(1.0);
    }
    let hits = pred
        .labels
        .iter()
        .zip(&truth.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.labels.len() as f64)
}

/// Intersection over union of one label's pixel sets; 1 when both are empty.
pub fn class_iou(pred: &LabelMap, truth: &LabelMap, label: SemanticLabel) -> Result<f64> {
    check_pair(pred, truth)?;
    let mut acc = SegAccumulator::default();
    acc.add(pred, truth)?;
    Ok(acc.class_iou(label))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegMetrics {
    pub pixel_accuracy: f64,
    /// Indexed by label id.
    pub class_iou: [f64; 7],
    pub background_iou: f64,
    /// Mean of the six body-class IoUs.
    pub non_background_iou: f64,
    /// IoU of the union of body classes taken as one mask.
    pub merged_body_iou: f64,
}

/// Pixel counts pooled over any number of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegAccumulator {
    pub pixels: u64,
    pub correct: u64,
    pub intersection: [u64; 7],
    pub union: [u64; 7],
    pub body_intersection: u64,
    pub body_union: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl SegAccumulator {
    pub fn add(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        check_pair(pred, truth)?;
        for (p, t) in pred.labels.iter().zip(&truth.labels) {
            self.pixels += 1;
            if p == t {
                self.correct += 1;
                self.intersection[p.index()] += 1;
                self.union[p.index()] += 1;
            } else {
                self.union[p.index()] += 1;
                self.union[t.index()] += 1;
            }
            match (p.is_body(), t.is_body()) {
                (true, true) => {
                    self.body_intersection += 1;
                    self.body_union += 1;
                }
                (false, false) => {}
                _ => self.body_union += 1,
            }
        }
        Ok(())
    }

    pub fn class_iou(&self, label: SemanticLabel) -> f64 {
        ratio(self.intersection[label.index()], self.union[label.index()])
    }

    pub fn metrics(&self) -> SegMetrics {
        let class_iou: [f64; 7] =
            core::array::from_fn(|i| ratio(self.intersection[i], self.union[i]));
        SegMetrics {
            pixel_accuracy: ratio(self.correct, self.pixels),
            class_iou,
            background_iou: class_iou[0],
            non_background_iou: class_iou[1..].iter().sum::<f64>() / 6.0,
            merged_body_iou: ratio(self.body_intersection, self.body_union),
        }
    }
}

/// Metrics of one prediction.
pub fn segmentation_metrics(pred: &LabelMap, truth: &LabelMap) -> Result<SegMetrics> {
    let mut acc = SegAccumulator::default();
    acc.add(pred, truth)?;
    Ok(acc.metrics())
}

/// Published scores of the original network on its real RGB-D test set, in
/// percent: pixel accuracy, background IoU, non-background IoU, then body
/// part IoUs in label order (head, torso, right arm, left arm, right leg,
/// left leg). Printed next to local results for orientation only.
pub const REFERENCE_SCORES: [(&str, f64); 9] = [
    ("pixel_accuracy", 97.65),
    ("background_iou", 94.19),
    ("non_background_iou", 62.38),
    ("head", 78.16),
    ("torso", 49.65),
    ("right_arm", 64.45),
    ("left_arm", 61.69),
    ("right_leg", 50.64),
    ("left_leg", 45.77),
];

/// Reference single-frame inference time of the original network, ms.
pub const REFERENCE_INFERENCE_MS: f64 = 7.86;

/// Share of joint estimates within each distance threshold of the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyCurve {
    /// Meters, ascending.
    pub thresholds: Vec<f64>,
    pub fraction: Vec<f64>,
}

/// 0 to 0.30 m in 1 cm steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..=30).map(|i| i as f64 / 100.0).collect()
}

/// Pools all joints of all frames into one curve.
pub fn joint_accuracy_curve(
    estimated: &[Vec<Vector3<f64>>],
    truth: &[Vec<Vector3<f64>>],
    thresholds: &[f64],
) -> Result<AccuracyCurve> {
    if estimated.len() != truth.len() {
        bail!(
            DimensionMismatch,
            "{} estimated frames vs {} ground-truth frames",
            estimated.len(),
            truth.len()
        );
    }
    if thresholds.is_empty()
        || thresholds.windows(2).any(|w| w[1] <= w[0])
        || thresholds.iter().any(|t| !t.is_finite())
    {
        bail!(
            InvalidInput,
            "thresholds must be finite and strictly ascending"
        );
    }
    let mut errors = Vec::new();
    for (f, (e, t)) in estimated.iter().zip(truth).enumerate() {
        if e.len() != t.len() {
            bail!(
                DimensionMismatch,
                "frame {f}: {} estimated joints vs {}",
                e.len(),
                t.len()
            );
        }
        errors.extend(e.iter().zip(t).map(|(a, b)| (a - b).norm()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(crate::Error::NonFinite("joint estimates"));
    }
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let fraction = thresholds
        .iter()
        .map(|th| {
            if n == 0 {
                1.0
            } else {
                errors.partition_point(|e| e <= th) as f64 / n as f64
            }
        })
        .collect();
    let curve = AccuracyCurve {
        thresholds: thresholds.to_vec(),
        fraction,
    };
    debug_assert!(curve.is_monotone());
    Ok(curve)
}

impl AccuracyCurve {
    pub fn is_monotone(&self) -> bool {
        self.fraction.windows(2).all(|w| w[1] >= w[0])
            && self.fraction.iter().all(|f| (0.0..=1.0).contains(f))
    }

    /// Trapezoidal area divided by the threshold span, in [0, 1].
    pub fn auc(&self) -> f64 {
        let t = &self.thresholds;
        let f = &self.fraction;
        if t.len() < 2 {
            return f.first().copied().unwrap_or(0.0);
        }
        let area: f64 = (1..t.len())
            .map(|i| (t[i] - t[i - 1]) * (f[i] + f[i - 1]) / 2.0)
            .sum();
        area / (t[t.len() - 1] - t[0])
    }

    /// Fraction at the largest grid threshold not above `threshold`.
    pub fn at(&self, threshold: f64) -> Option<f64> {
        let i = self.thresholds.partition_point(|t| *t <= threshold + 1e-12);
        (i > 0).then(|| self.fraction[i - 1])
    }
}

/// Per-threshold and area differences `a − b` between two curves on one
/// grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunComparison {
    pub thresholds: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub delta: Vec<f64>,
    pub auc_a: f64,
    pub auc_b: f64,
    pub auc_delta: f64,
}

pub fn compare_runs(a: &AccuracyCurve, b: &AccuracyCurve) -> Result<RunComparison> {
    if a.thresholds != b.thresholds {
        bail!(InvalidInput, "curves use different threshold grids");
    }
    let delta = a
        .fraction
        .iter()
        .zip(&b.fraction)
        .map(|(x, y)| x - y)
        .collect();
    let (auc_a, auc_b) = (a.auc(), b.auc());
    Ok(RunComparison {
        thresholds: a.thresholds.clone(),
        a: a.fraction.clone(),
        b: b.fraction.clone(),
        delta,
        auc_a,
        auc_b,
        auc_delta: auc_a - auc_b,
    })
}

impl RunComparison {
    /// `a` is at least as good as `b` at every threshold within `[lo, hi]`.
    pub fn dominates_within(&self, lo: f64, hi: f64) -> bool {
        self.thresholds
            .iter()
            .zip(&self.delta)
            .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
            .all(|(_, d)| *d >= 0.0)
    }
}
