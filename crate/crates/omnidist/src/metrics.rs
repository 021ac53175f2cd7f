//! Depth-evaluation metrics between predicted and ground-truth distance maps:
//! Abs Rel, Sq Rel, RMSE, RMSE_log, and the delta < 1.25^k accuracy fractions
//! (the standard KITTI-eigen definitions).

use serde::Serialize;
use thiserror::Error;

use crate::grid::{DistanceMap, ValidityMask};
use crate::scalar::{pairwise_sum, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("dimension mismatch between prediction, ground truth, and mask")]
    DimensionMismatch,
    #[error("no valid pixels after masking and range filtering")]
    EmptyMask,
    #[error("non-positive ground truth {value} at ({x}, {y}) inside the mask")]
    NonPositiveGroundTruth { x: usize, y: usize, value: f64 },
}

/// Evaluation clamp applied to predictions, and the upper ground-truth
/// validity bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampRange {
    fn default() -> Self {
        // Outdoor-scale bounds; configurable at every call site.
        ClampRange { lo: 0.3, hi: 80.0 }
    }
}

/// The seven reported metrics plus the evaluated pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
}

impl MetricReport {
    /// Header line matching [`Self::row`].
    pub fn header() -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "abs_rel", "sq_rel", "rmse", "rmse_log", "d<1.25", "d<1.25^2", "d<1.25^3", "pixels"
        )
    }

    pub fn row(&self) -> String {
        format!(
            "{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
            self.n_pixels
        )
    }
}

/// Options for [`compute_metrics`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsConfig {
    pub clamp: ClampRange,
    /// Rescale predictions by `median(gt) / median(pred)` before clamping;
    /// off by default because real-scale poses already pin absolute scale.
    pub median_scale: bool,
}

/// Computes the metric set over masked pixels.
///
/// Within the mask, ground truth must be positive and finite; pixels with
/// `gt > hi` are filtered out, and non-finite predictions are skipped (the
/// estimator emits NaN only where it had no photometric evidence at all).
/// Predictions are clamped to `[lo, hi]` before evaluation.
pub fn compute_metrics<S: Scalar>(
    pred: &DistanceMap<S>,
    gt: &DistanceMap<S>,
    mask: &ValidityMask,
    config: &MetricsConfig,
) -> Result<MetricReport, MetricsError> {
    let (w, h) = (gt.width(), gt.height());
    if pred.width() != w || pred.height() != h || mask.width() != w || mask.height() != h {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let g = gt.get(x, y).as_f64();
            if !g.is_finite() || g <= 0.0 {
                return Err(MetricsError::NonPositiveGroundTruth { x, y, value: g });
            }
            if g > config.clamp.hi {
                continue;
            }
            let p = pred.get(x, y).as_f64();
            if !p.is_finite() {
                continue;
            }
            pairs.push((p, g));
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    if config.median_scale {
        let median = |mut v: Vec<f64>| -> f64 {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let scale = median(pairs.iter().map(|(_, g)| *g).collect())
            / median(pairs.iter().map(|(p, _)| *p).collect());
        for (p, _) in pairs.iter_mut() {
            *p *= scale;
        }
    }

    let n = pairs.len();
    let mut abs_rel = Vec::with_capacity(n);
    let mut sq_rel = Vec::with_capacity(n);
    let mut sq_err = Vec::with_capacity(n);
    let mut sq_log_err = Vec::with_capacity(n);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    for (p, g) in &pairs {
        let p = p.clamp(config.clamp.lo, config.clamp.hi);
        let g = *g;
        let diff = p - g;
        abs_rel.push(diff.abs() / g);
        sq_rel.push(diff * diff / g);
        sq_err.push(diff * diff);
        let log_diff = p.ln() - g.ln();
        sq_log_err.push(log_diff * log_diff);
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            d2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            d3 += 1;
        }
    }
    let mean = |v: &[f64]| pairwise_sum(v) / n as f64;
    Ok(MetricReport {
        abs_rel: mean(&abs_rel),
        sq_rel: mean(&sq_rel),
        rmse: mean(&sq_err).sqrt(),
        rmse_log: mean(&sq_log_err).sqrt(),
        delta1: d1 as f64 / n as f64,
        delta2: d2 as f64 / n as f64,
        delta3: d3 as f64 / n as f64,
        n_pixels: n,
    })
}
