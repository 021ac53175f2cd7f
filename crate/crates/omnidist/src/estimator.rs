//! Direct per-pixel distance optimizer.
//!
//! Stands in for a trained regressor at desk scale: it minimizes the same
//! photometric objective through the same fisheye geometry, using real-scale
//! poses. A discrete hypothesis sweep over inverse-distance values picks the
//! per-pixel argmin, then golden-section refinement searches the continuous
//! cost within one hypothesis interval. A three-level image pyramid runs the
//! sweep once at the coarsest level and refines upward.
//!
//! All cost evaluations share one code path (the 3x3 SSIM + L1 patch loss of
//! the warp module) so the sweep, the refinement, and the contract tests see
//! bit-identical numbers.

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::MeiIntrinsics;
use crate::grid::{DistanceMap, Grid, ImageGrid, ValidityMask};
use crate::pose::RigidTransform;
use crate::raytable::RayTable;
use crate::scalar::pairwise_sum;
use crate::warp::{in_sample_bounds, loss_at, WarpError};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("at least one source view is required")]
    NoSources,
    #[error("source baseline {translation_norm} m is below 1e-6 m: no parallax")]
    NoParallax { translation_norm: f64 },
    #[error("invalid hypothesis set: {0}")]
    BadHypotheses(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Warp(#[from] WarpError),
}

/// Strictly increasing candidate distances in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    values: Vec<f64>,
}

impl HypothesisSet {
    /// `count` values uniform in inverse distance over `[l_min, l_max]`;
    /// inverse spacing equalizes pixel-displacement resolution.
    pub fn inverse_uniform(l_min: f64, l_max: f64, count: usize) -> Result<Self, EstimateError> {
        if !(l_min > 0.0 && l_max > l_min) {
            return Err(EstimateError::BadHypotheses(format!(
                "need 0 < l_min < l_max, got [{l_min}, {l_max}]"
            )));
        }
        if count < 2 {
            return Err(EstimateError::BadHypotheses(format!(
                "need at least 2 hypotheses, got {count}"
            )));
        }
        let inv_min = 1.0 / l_max;
        let inv_max = 1.0 / l_min;
        let values = (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                1.0 / (inv_max + t * (inv_min - inv_max))
            })
            .collect();
        Ok(HypothesisSet { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, EstimateError> {
        if values.len() < 2 {
            return Err(EstimateError::BadHypotheses("need at least 2 values".into()));
        }
        if values[0] <= 0.0 {
            return Err(EstimateError::BadHypotheses("values must be positive".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EstimateError::BadHypotheses(
                "values must be strictly increasing".into(),
            ));
        }
        Ok(HypothesisSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Search bracket of one hypothesis interval on each side of the
    /// hypothesis nearest to `value`.
    pub fn bracket(&self, value: f64) -> (f64, f64) {
        let n = self.values.len();
        let mut nearest = 0;
        let mut best = f64::INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            let d = (v - value).abs();
            if d < best {
                best = d;
                nearest = i;
            }
        }
        (
            self.values[nearest.saturating_sub(1)],
            self.values[(nearest + 1).min(n - 1)],
        )
    }
}

/// One adjacent frame: its image, the transform taking target-camera
/// coordinates into its camera frame, and its intrinsics.
#[derive(Debug, Clone)]
pub struct SourceView {
    pub image: ImageGrid,
    pub source_from_target: RigidTransform<f64>,
    pub cam: MeiIntrinsics<f64>,
}

/// Per-pixel photometric costs over the hypothesis set. Invalid entries
/// (no source produced a sampleable warp) are stored as infinity.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    hypotheses: HypothesisSet,
    costs: Vec<f64>,
}

impl CostVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn hypotheses(&self) -> &HypothesisSet {
        &self.hypotheses
    }

    pub fn cost(&self, x: usize, y: usize, k: usize) -> Option<f64> {
        let v = self.costs[(y * self.width + x) * self.hypotheses.len() + k];
        v.is_finite().then_some(v)
    }

    /// Index of the minimal cost, ties broken toward the smaller distance.
    pub fn argmin(&self, x: usize, y: usize) -> Option<usize> {
        let base = (y * self.width + x) * self.hypotheses.len();
        let mut best: Option<(usize, f64)> = None;
        for k in 0..self.hypotheses.len() {
            let c = self.costs[base + k];
            if !c.is_finite() {
                continue;
            }
            match best {
                Some((_, bc)) if bc <= c => {}
                _ => best = Some((k, c)),
            }
        }
        best.map(|(k, _)| k)
    }

    /// Max minus min valid cost; low spread means the photometric evidence
    /// does not discriminate between hypotheses (untextured regions).
    pub fn spread(&self, x: usize, y: usize) -> Option<f64> {
        let base = (y * self.width + x) * self.hypotheses.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut any = false;
        for k in 0..self.hypotheses.len() {
            let c = self.costs[base + k];
            if c.is_finite() {
                lo = lo.min(c);
                hi = hi.max(c);
                any = true;
            }
        }
        any.then(|| hi - lo)
    }
}

/// Everything a cost evaluation needs for one pyramid level.
pub struct CostContext<'a> {
    pub target: &'a ImageGrid,
    pub base_valid: &'a ValidityMask,
    pub sources: &'a [SourceView],
    pub rays: &'a RayTable,
}

/// Reusable patch buffers; one per worker.
struct PatchScratch {
    target: ImageGrid,
    warped: ImageGrid,
    mask: ValidityMask,
}

impl PatchScratch {
    fn new(channels: usize) -> PatchScratch {
        PatchScratch {
            target: ImageGrid::new(3, 3, channels).expect("valid channels"),
            warped: ImageGrid::new(3, 3, channels).expect("valid channels"),
            mask: ValidityMask::all_invalid(3, 3),
        }
    }
}

/// Min-over-sources 3x3 patch loss at pixel `(x, y)` for a constant distance
/// `l`. Reproduces exactly what a full-image constant-distance warp followed
/// by the windowed loss computes at that pixel.
fn patch_cost(ctx: &CostContext, scratch: &mut PatchScratch, x: usize, y: usize, l: f64) -> Option<f64> {
    if l <= 0.0 {
        return None;
    }
    let (w, h) = (ctx.target.width(), ctx.target.height());
    let channels = ctx.target.channels();
    let mut best: Option<f64> = None;
    for source in ctx.sources {
        let sw = source.cam.width as usize;
        let sh = source.cam.height as usize;
        for dy in 0..3usize {
            for dx in 0..3usize {
                scratch.mask.set(dx, dy, false);
            }
        }
        let mut center_ok = false;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !ctx.base_valid.get(nx, ny) {
                    continue;
                }
                let Some(ray) = ctx.rays.ray(nx, ny) else {
                    continue;
                };
                let moved = source.source_from_target.apply(&(ray * l));
                let Ok(px) = source.cam.project(&moved) else {
                    continue;
                };
                if !in_sample_bounds(px.u, px.v, sw, sh) {
                    continue;
                }
                let (sx, sy) = ((dx + 1) as usize, (dy + 1) as usize);
                for c in 0..channels {
                    scratch
                        .warped
                        .set(sx, sy, c, crate::warp::sample_bilinear(&source.image, px.u, px.v, c) as f32);
                    scratch.target.set(sx, sy, c, ctx.target.get(nx, ny, c));
                }
                scratch.mask.set(sx, sy, true);
                if dx == 0 && dy == 0 {
                    center_ok = true;
                }
            }
        }
        if !center_ok {
            continue;
        }
        let cost = loss_at(&scratch.target, &scratch.warped, &scratch.mask, 1, 1);
        best = Some(match best {
            Some(b) if b <= cost => b,
            _ => cost,
        });
    }
    best
}

fn run_maybe_parallel<T: Send>(jobs: usize, count: usize, eval: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| (0..count).into_par_iter().map(|i| eval(i)).collect())
    } else {
        (0..count).map(eval).collect()
    }
}

/// Evaluates the photometric cost of every hypothesis at every pixel and
/// returns the volume plus the per-pixel argmin distances.
pub fn hypothesis_sweep(
    ctx: &CostContext,
    hypotheses: &HypothesisSet,
    jobs: usize,
) -> Result<(CostVolume, DistanceMap<f32>), EstimateError> {
    if ctx.sources.is_empty() {
        return Err(EstimateError::NoSources);
    }
    let (w, h) = (ctx.target.width(), ctx.target.height());
    if ctx.rays.width() != w || ctx.rays.height() != h {
        return Err(EstimateError::Dimension(format!(
            "ray table {}x{} vs target {w}x{h}",
            ctx.rays.width(),
            ctx.rays.height()
        )));
    }
    let k_count = hypotheses.len();
    // Cost rows: one slab of k values per pixel row, evaluated row-parallel
    // through the shared patch evaluator.
    let channels = ctx.target.channels();
    let rows: Vec<Vec<f64>> = run_maybe_parallel(jobs, h, |y| {
        let mut scratch = PatchScratch::new(channels);
        let mut row = vec![f64::INFINITY; w * k_count];
        for x in 0..w {
            if !ctx.base_valid.get(x, y) {
                continue;
            }
            for (k, l) in hypotheses.values().iter().enumerate() {
                // Evaluate at the f32-representable distance actually stored.
                let l32 = *l as f32;
                if let Some(cost) = patch_cost(ctx, &mut scratch, x, y, l32 as f64) {
                    row[x * k_count + k] = cost;
                }
            }
        }
        row
    });
    let mut costs = Vec::with_capacity(w * h * k_count);
    for row in rows {
        costs.extend(row);
    }
    let volume = CostVolume {
        width: w,
        height: h,
        hypotheses: hypotheses.clone(),
        costs,
    };
    let mut distance = DistanceMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(k) = volume.argmin(x, y) {
                distance.set(x, y, hypotheses.values()[k] as f32);
            }
        }
    }
    Ok((volume, distance))
}

/// Hypothesis indices searched around the upsampled value at each pyramid
/// ascent; absorbs coarse argmin errors of up to this many intervals.
const LOCAL_RESWEEP_RADIUS: usize = 4;

/// Re-evaluates the discrete hypotheses within `radius` indices of each
/// pixel's current value and keeps the per-pixel argmin (ties toward the
/// smaller distance, as in the full sweep).
fn local_resweep(
    init: &DistanceMap<f32>,
    ctx: &CostContext,
    hypotheses: &HypothesisSet,
    radius: usize,
    jobs: usize,
) -> Result<DistanceMap<f32>, EstimateError> {
    let (w, h) = (ctx.target.width(), ctx.target.height());
    if init.width() != w || init.height() != h {
        return Err(EstimateError::Dimension(format!(
            "init map {}x{} vs target {w}x{h}",
            init.width(),
            init.height()
        )));
    }
    let channels = ctx.target.channels();
    let values = hypotheses.values();
    let rows: Vec<Vec<f32>> = run_maybe_parallel(jobs, h, |y| {
        let mut scratch = PatchScratch::new(channels);
        let mut row = vec![f32::NAN; w];
        for x in 0..w {
            if !init.is_valid(x, y) {
                continue;
            }
            let current = init.get(x, y);
            row[x] = current;
            let nearest = nearest_index(values, current as f64);
            let lo = nearest.saturating_sub(radius);
            let hi = (nearest + radius).min(values.len() - 1);
            let mut best: Option<(f32, f64)> = None;
            for l in values[lo..=hi].iter() {
                let snapped = *l as f32;
                if let Some(cost) = patch_cost(ctx, &mut scratch, x, y, snapped as f64) {
                    match best {
                        Some((_, bc)) if bc <= cost => {}
                        _ => best = Some((snapped, cost)),
                    }
                }
            }
            // Keep the current value when it already beats the grid.
            if let Some((value, cost)) = best {
                if let Some(current_cost) = patch_cost(ctx, &mut scratch, x, y, current as f64) {
                    if current_cost > cost {
                        row[x] = value;
                    }
                } else {
                    row[x] = value;
                }
            }
        }
        row
    });
    let mut out = DistanceMap::invalid(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, value) in row.into_iter().enumerate() {
            out.set(x, y, value);
        }
    }
    Ok(out)
}

fn nearest_index(values: &[f64], value: f64) -> usize {
    let mut nearest = 0;
    let mut best = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        let d = (v - value).abs();
        if d < best {
            best = d;
            nearest = i;
        }
    }
    nearest
}

/// Golden-section refinement of each pixel within one hypothesis interval of
/// its initial value. Never worsens the cost: the best of all evaluated
/// candidates (the initial value included) is kept. Returns the refined map
/// and the per-pixel refined costs (infinity where no cost exists).
pub fn refine_local(
    init: &DistanceMap<f32>,
    ctx: &CostContext,
    hypotheses: &HypothesisSet,
    iterations: usize,
    jobs: usize,
) -> Result<(DistanceMap<f32>, Grid<f64>), EstimateError> {
    let (w, h) = (ctx.target.width(), ctx.target.height());
    if init.width() != w || init.height() != h {
        return Err(EstimateError::Dimension(format!(
            "init map {}x{} vs target {w}x{h}",
            init.width(),
            init.height()
        )));
    }
    let channels = ctx.target.channels();
    let rows: Vec<(Vec<f32>, Vec<f64>)> = run_maybe_parallel(jobs, h, |y| {
        let mut scratch = PatchScratch::new(channels);
        let mut values = vec![f32::NAN; w];
        let mut costs = vec![f64::INFINITY; w];
        for x in 0..w {
            if !init.is_valid(x, y) {
                continue;
            }
            let init_value = init.get(x, y);
            // Candidates are snapped to f32 so the stored map's cost equals
            // the evaluated cost exactly.
            let mut eval = |l: f64| -> (f32, Option<f64>) {
                let snapped = l as f32;
                (snapped, patch_cost(ctx, &mut scratch, x, y, snapped as f64))
            };
            let Some(init_cost) = eval(init_value as f64).1 else {
                values[x] = init_value;
                continue;
            };
            let (mut best_value, mut best_cost) = (init_value, init_cost);
            let consider = |value: f32, cost: Option<f64>, best_value: &mut f32, best_cost: &mut f64| {
                if let Some(c) = cost {
                    if c < *best_cost {
                        *best_cost = c;
                        *best_value = value;
                    }
                }
            };
            let (mut a, mut b) = hypotheses.bracket(init_value as f64);
            let phi = 0.618_033_988_749_894_9_f64;
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let (cv, cc) = eval(c);
            consider(cv, cc, &mut best_value, &mut best_cost);
            let (dv, dc) = eval(d);
            consider(dv, dc, &mut best_value, &mut best_cost);
            let mut fc = cc.unwrap_or(f64::INFINITY);
            let mut fd = dc.unwrap_or(f64::INFINITY);
            for _ in 0..iterations {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    let (v, cost) = eval(c);
                    consider(v, cost, &mut best_value, &mut best_cost);
                    fc = cost.unwrap_or(f64::INFINITY);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    let (v, cost) = eval(d);
                    consider(v, cost, &mut best_value, &mut best_cost);
                    fd = cost.unwrap_or(f64::INFINITY);
                }
            }
            values[x] = best_value;
            costs[x] = best_cost;
        }
        (values, costs)
    });
    let mut refined = DistanceMap::invalid(w, h);
    let mut costs = Grid::filled(w, h, f64::INFINITY);
    for (y, (row_values, row_costs)) in rows.into_iter().enumerate() {
        for x in 0..w {
            refined.set(x, y, row_values[x]);
            costs.set(x, y, row_costs[x]);
        }
    }
    Ok((refined, costs))
}

/// Edge-aware smoothness score: mean over both axes of
/// `|d(L/mean L)| * exp(-|dI|)` with forward differences, scaled by `weight`.
/// Gradients are taken only between valid distance pixels.
pub fn smoothness(
    distances: &DistanceMap<f32>,
    image: &ImageGrid,
    weight: f64,
) -> Result<f64, EstimateError> {
    let (w, h) = (distances.width(), distances.height());
    if image.width() != w || image.height() != h {
        return Err(EstimateError::Dimension(format!(
            "distance map {w}x{h} vs image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut valid_values = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if distances.is_valid(x, y) {
                valid_values.push(distances.get(x, y) as f64);
            }
        }
    }
    if valid_values.is_empty() {
        return Ok(0.0);
    }
    let mean = pairwise_sum(&valid_values) / valid_values.len() as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let mut x_terms = Vec::new();
    let mut y_terms = Vec::new();
    let grad_image = |x0: usize, y0: usize, x1: usize, y1: usize| -> f64 {
        let mut sum = 0.0;
        for c in 0..image.channels() {
            sum += (image.get(x1, y1, c) as f64 - image.get(x0, y0, c) as f64).abs();
        }
        sum / image.channels() as f64
    };
    for y in 0..h {
        for x in 0..w {
            if !distances.is_valid(x, y) {
                continue;
            }
            let here = distances.get(x, y) as f64 / mean;
            if x + 1 < w && distances.is_valid(x + 1, y) {
                let d = (distances.get(x + 1, y) as f64 / mean - here).abs();
                x_terms.push(d * (-grad_image(x, y, x + 1, y)).exp());
            }
            if y + 1 < h && distances.is_valid(x, y + 1) {
                let d = (distances.get(x, y + 1) as f64 / mean - here).abs();
                y_terms.push(d * (-grad_image(x, y, x, y + 1)).exp());
            }
        }
    }
    let mean_of = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            pairwise_sum(v) / v.len() as f64
        }
    };
    Ok(weight * (mean_of(&x_terms) + mean_of(&y_terms)))
}

/// Estimator configuration; every field has the documented default.
#[derive(Debug, Clone)]
pub struct EstimateConfig {
    /// Distance search range in meters.
    pub l_min: f64,
    pub l_max: f64,
    /// Hypothesis count for the sweep.
    pub hypothesis_count: usize,
    /// Image pyramid depth; the sweep runs at the coarsest level.
    pub pyramid_levels: usize,
    /// Golden-section iterations per pixel per level.
    pub golden_iterations: usize,
    /// Cost-spread threshold below which a pixel counts as low-confidence.
    pub low_confidence_spread: f64,
    /// Fill low-confidence pixels from confident neighbors.
    pub fill_low_confidence: bool,
    /// Square window (side length, odd) for the low-confidence fill.
    pub fill_window: usize,
    /// Intensity scale of the edge-aware fill weights.
    pub fill_intensity_sigma: f64,
    /// Run the smoothness-weighted median cleanup over the refined map
    /// (suppresses speckle at depth discontinuities).
    pub median_cleanup: bool,
    /// Pixels whose best refined cost exceeds this are marked invalid: no
    /// hypothesis explained the patch (occlusion, model violation).
    pub max_valid_cost: f64,
    /// Worker threads; 1 runs everything on the calling thread.
    pub jobs: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            l_min: 0.3,
            l_max: 80.0,
            hypothesis_count: 64,
            pyramid_levels: 3,
            golden_iterations: 24,
            low_confidence_spread: 1e-3,
            fill_low_confidence: true,
            fill_window: 7,
            fill_intensity_sigma: 0.1,
            median_cleanup: true,
            max_valid_cost: 0.015,
            jobs: 1,
        }
    }
}

/// One pass of a 5x5 intensity-weighted median over valid pixels. A pixel is
/// replaced by the weighted median of the valid neighbors whose intensity
/// resembles its own, which snaps depth speckle at object boundaries onto
/// the majority side without blurring smooth regions.
fn weighted_median_cleanup(
    distances: &DistanceMap<f32>,
    image: &ImageGrid,
    intensity_sigma: f64,
) -> DistanceMap<f32> {
    let (w, h) = (distances.width(), distances.height());
    let mut out = distances.clone();
    for y in 0..h {
        for x in 0..w {
            if !distances.is_valid(x, y) {
                continue;
            }
            let here = image.luma(x, y) as f64;
            let mut candidates: Vec<(f64, f64)> = Vec::new();
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !distances.is_valid(nx, ny) {
                        continue;
                    }
                    let weight =
                        (-(image.luma(nx, ny) as f64 - here).abs() / intensity_sigma).exp();
                    candidates.push((distances.get(nx, ny) as f64, weight));
                }
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = candidates.iter().map(|(_, weight)| weight).sum();
            let mut acc = 0.0;
            for (value, weight) in &candidates {
                acc += weight;
                if acc + 1e-15 >= total / 2.0 {
                    out.set(x, y, *value as f32);
                    break;
                }
            }
        }
    }
    out
}

/// Per-run diagnostics accompanying the distance map.
#[derive(Debug, Clone)]
pub struct EstimateDiagnostics {
    /// Coarsest-sweep cost spread, upsampled to full resolution.
    pub confidence_spread: Grid<f64>,
    /// Pixels whose spread fell below the threshold.
    pub low_confidence: ValidityMask,
    /// Low-confidence pixels replaced by the edge-aware neighborhood median.
    pub filled_pixels: usize,
    /// Pixels invalidated because no hypothesis explained them photometrically.
    pub outlier_pixels: usize,
    /// Mean refined cost over valid pixels.
    pub mean_cost: f64,
    /// Edge-aware smoothness of the final map (weight 1).
    pub smoothness: f64,
    /// Final validity (pixels carrying a distance value).
    pub valid: ValidityMask,
}

#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub distance: DistanceMap<f32>,
    pub diagnostics: EstimateDiagnostics,
}

fn downsample_mask(mask: &ValidityMask) -> ValidityMask {
    let w = (mask.width() / 2).max(1);
    let h = (mask.height() / 2).max(1);
    let mut out = ValidityMask::all_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let x1 = (2 * x + 1).min(mask.width() - 1);
            let y1 = (2 * y + 1).min(mask.height() - 1);
            let all = mask.get(2 * x, 2 * y)
                && mask.get(x1, 2 * y)
                && mask.get(2 * x, y1)
                && mask.get(x1, y1);
            out.set(x, y, all);
        }
    }
    out
}

/// Recovers a distance map for `target` from one or more posed sources.
///
/// Coarse-to-fine: constant-distance hypothesis sweep at the coarsest
/// pyramid level, golden-section refinement at every level on the way up,
/// then an edge-aware median fill of low-confidence pixels. Deterministic
/// for identical inputs and config, independent of `jobs`.
pub fn estimate(
    target: &ImageGrid,
    target_cam: &MeiIntrinsics<f64>,
    sources: &[SourceView],
    base_valid: Option<&ValidityMask>,
    config: &EstimateConfig,
) -> Result<EstimateOutput, EstimateError> {
    if sources.is_empty() {
        return Err(EstimateError::NoSources);
    }
    for source in sources {
        let norm = source.source_from_target.translation.norm();
        if norm < 1e-6 {
            return Err(EstimateError::NoParallax {
                translation_norm: norm,
            });
        }
    }
    let (w, h) = (target.width(), target.height());
    if target_cam.width as usize != w || target_cam.height as usize != h {
        return Err(EstimateError::Dimension(format!(
            "target image {w}x{h} vs camera {}x{}",
            target_cam.width, target_cam.height
        )));
    }
    let full_valid = match base_valid {
        Some(mask) => {
            if mask.width() != w || mask.height() != h {
                return Err(EstimateError::Dimension(format!(
                    "validity mask {}x{} vs image {w}x{h}",
                    mask.width(),
                    mask.height()
                )));
            }
            mask.clone()
        }
        None => ValidityMask::all_valid(w, h),
    };

    // Pyramids, finest first.
    let levels = config.pyramid_levels.max(1);
    let mut targets = vec![target.clone()];
    let mut cams = vec![target_cam.clone()];
    let mut masks = vec![full_valid];
    let mut source_levels: Vec<Vec<SourceView>> = vec![sources.to_vec()];
    for _ in 1..levels {
        targets.push(targets.last().unwrap().downsample2());
        cams.push(cams.last().unwrap().halved());
        masks.push(downsample_mask(masks.last().unwrap()));
        let prev = source_levels.last().unwrap();
        source_levels.push(
            prev.iter()
                .map(|s| SourceView {
                    image: s.image.downsample2(),
                    source_from_target: s.source_from_target.clone(),
                    cam: s.cam.halved(),
                })
                .collect(),
        );
    }
    let tables: Vec<RayTable> = cams.iter().map(RayTable::build).collect();

    let hypotheses =
        HypothesisSet::inverse_uniform(config.l_min, config.l_max, config.hypothesis_count)?;

    // Sweep at the coarsest level.
    let coarse = levels - 1;
    let ctx = CostContext {
        target: &targets[coarse],
        base_valid: &masks[coarse],
        sources: &source_levels[coarse],
        rays: &tables[coarse],
    };
    let (volume, mut distance) = hypothesis_sweep(&ctx, &hypotheses, config.jobs)?;

    // Refine upward: nearest-neighbor upsampling, a short local re-sweep to
    // absorb coarse-level argmin noise (finer levels discriminate hypotheses
    // the coarse level cannot), then golden-section refinement.
    let mut costs = Grid::filled(distance.width(), distance.height(), f64::INFINITY);
    for level in (0..levels).rev() {
        if level != coarse {
            let mut up = DistanceMap::invalid(targets[level].width(), targets[level].height());
            for y in 0..up.height() {
                for x in 0..up.width() {
                    let cx = (x / 2).min(distance.width() - 1);
                    let cy = (y / 2).min(distance.height() - 1);
                    up.set(x, y, distance.get(cx, cy));
                }
            }
            distance = up;
        }
        let ctx = CostContext {
            target: &targets[level],
            base_valid: &masks[level],
            sources: &source_levels[level],
            rays: &tables[level],
        };
        if level != coarse {
            distance = local_resweep(&distance, &ctx, &hypotheses, LOCAL_RESWEEP_RADIUS, config.jobs)?;
        }
        let (refined, refined_costs) =
            refine_local(&distance, &ctx, &hypotheses, config.golden_iterations, config.jobs)?;
        distance = refined;
        costs = refined_costs;
    }

    // Confidence from the coarsest sweep, upsampled to full resolution.
    let factor = 1usize << (levels - 1);
    let mut confidence_spread = Grid::filled(w, h, 0.0f64);
    let mut low_confidence = ValidityMask::all_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let cx = (x / factor).min(volume.width() - 1);
            let cy = (y / factor).min(volume.height() - 1);
            match volume.spread(cx, cy) {
                Some(spread) => {
                    confidence_spread.set(x, y, spread);
                    low_confidence.set(x, y, spread < config.low_confidence_spread);
                }
                None => low_confidence.set(x, y, true),
            }
        }
    }

    // Photometric outliers: the best cost found still fails to explain the
    // patch (occlusions, out-of-model motion). Their values are untrusted.
    let mut outlier_pixels = 0;
    for y in 0..h {
        for x in 0..w {
            let c = *costs.get(x, y);
            if c.is_finite() && c > config.max_valid_cost && distance.is_valid(x, y) {
                distance.set(x, y, f32::NAN);
                outlier_pixels += 1;
            }
        }
    }

    if config.median_cleanup {
        distance = weighted_median_cleanup(&distance, target, config.fill_intensity_sigma);
    }

    // Edge-aware median fill of low-confidence pixels.
    let mut filled_pixels = 0;
    if config.fill_low_confidence {
        let radius = (config.fill_window.max(1) / 2) as isize;
        let snapshot = distance.clone();
        for y in 0..h {
            for x in 0..w {
                if !low_confidence.get(x, y) || !snapshot.is_valid(x, y) {
                    continue;
                }
                let here = target.luma(x, y) as f64;
                let mut candidates: Vec<(f64, f64)> = Vec::new();
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if low_confidence.get(nx, ny) || !snapshot.is_valid(nx, ny) {
                            continue;
                        }
                        let weight = (-(target.luma(nx, ny) as f64 - here).abs()
                            / config.fill_intensity_sigma)
                            .exp();
                        candidates.push((snapshot.get(nx, ny) as f64, weight));
                    }
                }
                if candidates.is_empty() {
                    continue;
                }
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
                let total: f64 = candidates.iter().map(|(_, w)| w).sum();
                let mut acc = 0.0;
                for (value, weight) in &candidates {
                    acc += weight;
                    if acc + 1e-15 >= total / 2.0 {
                        distance.set(x, y, *value as f32);
                        break;
                    }
                }
                filled_pixels += 1;
            }
        }
    }

    let valid = distance.validity();
    let mut cost_values = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let c = *costs.get(x, y);
            if c.is_finite() {
                cost_values.push(c);
            }
        }
    }
    let mean_cost = if cost_values.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(&cost_values) / cost_values.len() as f64
    };
    let smoothness = smoothness(&distance, target, 1.0)?;

    Ok(EstimateOutput {
        distance,
        diagnostics: EstimateDiagnostics {
            confidence_spread,
            low_confidence,
            filled_pixels,
            outlier_pixels,
            mean_cost,
            smoothness,
            valid,
        },
    })
}
