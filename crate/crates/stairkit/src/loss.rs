//! Multitask detection loss (fixed and dynamically weighted forms), the
//! validation error accumulators driving the weight schedule, and cell-level
//! detection metrics.
//!
//! Classification uses binary cross-entropy on cell confidence; location
//! uses the L1 norm on the normalized coordinates, split into an abscissa
//! term and an ordinate term so their weights can be balanced separately.

use crate::grid::DetectionGrid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("grids are {0}x{1} and {2}x{3}")]
    DimsMismatch(usize, usize, usize, usize),
    #[error("{preds} prediction grids but {gts} ground-truth grids")]
    LengthMismatch { preds: usize, gts: usize },
}

/// Loss weighting configuration.
///
/// `alpha`/`beta` weight the abscissa/ordinate location terms in the dynamic
/// form. The fixed (legacy) form instead uses `lambda` for the
/// classification/location trade-off and `alpha` for the ordinate-vs-
/// abscissa trade-off. `sigma` is the floor below which the schedule stops
/// adjusting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl LossWeights {
    /// Starting point of the dynamic schedule: both location weights at 10.
    pub fn dynamic_init() -> Self {
        LossWeights { alpha: 10.0, beta: 10.0, sigma: 0.5, lambda: 4.0 }
    }

    /// Reference fixed weighting: `lambda` and `alpha` both 4.
    pub fn fixed_reference() -> Self {
        LossWeights { alpha: 4.0, beta: 4.0, sigma: 0.5, lambda: 4.0 }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::dynamic_init()
    }
}

/// Which total is assembled from the three terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// `cls + lambda*x + lambda*alpha*y`.
    Fixed,
    /// `cls + alpha*x + beta*y`.
    Dynamic,
}

/// Which confidence gates the location terms. The loss formula multiplies
/// the location error by the predicted confidence; the evaluation error
/// accumulators gate by ground truth. Ground truth is the default here so
/// that negative cells (whose coordinates are meaningless) never contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocationGate {
    Predicted,
    #[default]
    GroundTruth,
}

/// The assembled loss and its components. All terms are means over the
/// `rows x cols` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_term: f64,
    pub x_term: f64,
    pub y_term: f64,
}

/// Summed L1 location errors over positive ground-truth cells, typically
/// accumulated across a validation set. Merging partial accumulations is
/// plain addition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ValErrors {
    pub x_error: f64,
    pub y_error: f64,
}

impl std::ops::Add for ValErrors {
    type Output = ValErrors;
    fn add(self, rhs: ValErrors) -> ValErrors {
        ValErrors { x_error: self.x_error + rhs.x_error, y_error: self.y_error + rhs.y_error }
    }
}

/// Cell-level detection counts and ratios at a confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    pub accuracy: f64,
    pub recall: f64,
    pub iou: f64,
}

impl MetricReport {
    /// Builds the ratio fields from raw counts. A zero denominator with zero
    /// true positives counts as vacuously perfect (ratio 1).
    pub fn from_counts(tp: u64, fp: u64, false_neg: u64) -> Self {
        let ratio = |num: u64, denom: u64| {
            if denom == 0 {
                1.0
            } else {
                num as f64 / denom as f64
            }
        };
        MetricReport {
            tp,
            fp,
            false_neg,
            accuracy: ratio(tp, tp + fp),
            recall: ratio(tp, tp + false_neg),
            iou: ratio(tp, tp + fp + false_neg),
        }
    }
}

fn check_dims(a: &DetectionGrid, b: &DetectionGrid) -> Result<(), LossError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(LossError::DimsMismatch(a.rows(), a.cols(), b.rows(), b.cols()));
    }
    Ok(())
}

/// Binary cross-entropy with the prediction clamped away from 0 and 1 so
/// exact labels stay finite.
fn bce(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(1e-12, 1.0 - 1e-12);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// L1 distances over the abscissa and ordinate halves of a coordinate block.
fn l1_split(pred: &[f64; 8], gt: &[f64; 8]) -> (f64, f64) {
    let mut dx = 0.0;
    let mut dy = 0.0;
    for k in 0..4 {
        dx += (pred[2 * k] - gt[2 * k]).abs();
        dy += (pred[2 * k + 1] - gt[2 * k + 1]).abs();
    }
    (dx, dy)
}

/// Computes the multitask loss of a predicted grid against ground truth.
///
/// `cls_term` is the mean binary cross-entropy over all cells; `x_term` and
/// `y_term` are the means of the gated L1 errors over the four abscissas and
/// four ordinates. The total combines them according to `mode`.
pub fn multitask_loss(
    pred: &DetectionGrid,
    gt: &DetectionGrid,
    weights: &LossWeights,
    mode: LossMode,
    gate: LocationGate,
) -> Result<LossBreakdown, LossError> {
    check_dims(pred, gt)?;
    let n_cells = (pred.rows() * pred.cols()) as f64;
    let mut cls = 0.0;
    let mut x = 0.0;
    let mut y = 0.0;
    for (i, j, p) in pred.iter_cells() {
        let g = gt.cell(i, j).expect("dims checked");
        cls += bce(p.conf, g.conf);
        let gate_val = match gate {
            LocationGate::Predicted => p.conf,
            LocationGate::GroundTruth => g.conf,
        };
        if gate_val != 0.0 {
            let (dx, dy) = l1_split(&p.coords, &g.coords);
            x += gate_val * dx;
            y += gate_val * dy;
        }
    }
    let cls_term = cls / n_cells;
    let x_term = x / n_cells;
    let y_term = y / n_cells;
    let total = match mode {
        LossMode::Fixed => {
            cls_term + weights.lambda * x_term + weights.lambda * weights.alpha * y_term
        }
        LossMode::Dynamic => cls_term + weights.alpha * x_term + weights.beta * y_term,
    };
    Ok(LossBreakdown { total, cls_term, x_term, y_term })
}

/// Accumulates the total abscissa/ordinate L1 errors over aligned
/// prediction/ground-truth grid lists. Only positive ground-truth cells
/// contribute (gated by the ground-truth confidence); sums are not
/// normalized.
pub fn coord_errors(
    preds: &[DetectionGrid],
    gts: &[DetectionGrid],
) -> Result<ValErrors, LossError> {
    if preds.len() != gts.len() {
        return Err(LossError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    let mut acc = ValErrors::default();
    for (pred, gt) in preds.iter().zip(gts) {
        check_dims(pred, gt)?;
        for (i, j, p) in pred.iter_cells() {
            let g = gt.cell(i, j).expect("dims checked");
            if g.conf != 0.0 {
                let (dx, dy) = l1_split(&p.coords, &g.coords);
                acc.x_error += g.conf * dx;
                acc.y_error += g.conf * dy;
            }
        }
    }
    Ok(acc)
}

/// One step of the dynamic weight schedule.
///
/// The imbalance `delta = (X - Y) / max(X, Y)` moves weight from the
/// ordinate term to the abscissa term (or back): `alpha + delta`,
/// `beta - delta`. If either candidate would fall below the `sigma` floor,
/// neither weight changes, preserving `alpha + beta` in every branch. Both
/// errors zero leave the weights unchanged (the imbalance is undefined).
pub fn update_weights(weights: &LossWeights, errors: &ValErrors) -> LossWeights {
    let (x, y) = (errors.x_error, errors.y_error);
    let denom = x.max(y);
    if denom == 0.0 {
        return *weights;
    }
    let delta = (x - y) / denom;
    let alpha = weights.alpha + delta;
    let beta = weights.beta - delta;
    if alpha < weights.sigma || beta < weights.sigma {
        return *weights;
    }
    LossWeights { alpha, beta, ..*weights }
}

/// Counts per-cell detection outcomes at a confidence threshold (a cell is
/// positive when `conf >= threshold`) and derives accuracy, recall, and IoU.
pub fn detection_metrics(
    pred: &DetectionGrid,
    gt: &DetectionGrid,
    conf_threshold: f64,
) -> Result<MetricReport, LossError> {
    check_dims(pred, gt)?;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut false_neg = 0u64;
    for (i, j, p) in pred.iter_cells() {
        let g = gt.cell(i, j).expect("dims checked");
        let pred_pos = p.conf >= conf_threshold;
        let gt_pos = g.conf >= conf_threshold;
        match (pred_pos, gt_pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => false_neg += 1,
            (false, false) => {}
        }
    }
    Ok(MetricReport::from_counts(tp, fp, false_neg))
}
