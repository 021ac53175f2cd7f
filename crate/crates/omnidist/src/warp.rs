//! View synthesis: distance + pose pixel mapping, bilinear warping, and the
//! photometric reconstruction loss.
//!
//! Pixel `(u, v)` has its center at continuous coordinates `(u + 0.5,
//! v + 0.5)`, matching the ray-table sampling. A mapped coordinate is valid
//! when all four bilinear neighbors exist, i.e. it lies in
//! `[0.5, w - 0.5] x [0.5, h - 0.5]`; out-of-bounds pixels are excluded
//! rather than clamped so fisheye corners do not smear border gradients.

use thiserror::Error;

use crate::camera::MeiIntrinsics;
use crate::grid::{DistanceMap, Grid, ImageGrid, ValidityMask};
use crate::pose::RigidTransform;
use crate::raytable::RayTable;
use crate::scalar::pairwise_sum;

/// SSIM/L1 mixing weight.
pub const LOSS_ALPHA: f64 = 0.85;
/// SSIM stabilization constants for intensities in [0, 1].
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// SSIM window half-size (3x3 window).
const SSIM_RADIUS: isize = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WarpError {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("no valid pixels under the mask")]
    EmptyMask,
    #[error("empty input list")]
    EmptyInput,
}

/// Per-target-pixel continuous source coordinates.
#[derive(Debug, Clone)]
pub struct PixelMapping {
    width: usize,
    height: usize,
    source_width: usize,
    source_height: usize,
    coords: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl PixelMapping {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let idx = y * self.width + x;
        self.valid[idx].then(|| self.coords[idx])
    }

    /// Identity mapping of an image onto itself (each pixel to its center).
    pub fn identity(width: usize, height: usize) -> PixelMapping {
        let mut coords = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                coords.push([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
        PixelMapping {
            width,
            height,
            source_width: width,
            source_height: height,
            coords,
            valid: vec![true; width * height],
        }
    }

    /// Builds a mapping from explicit coordinates (test and tooling hook).
    pub fn from_coords(
        width: usize,
        height: usize,
        source_width: usize,
        source_height: usize,
        coords: Vec<[f64; 2]>,
    ) -> Result<PixelMapping, WarpError> {
        if coords.len() != width * height {
            return Err(WarpError::DimensionMismatch {
                context: format!("{} coords for {width}x{height}", coords.len()),
            });
        }
        let valid = coords
            .iter()
            .map(|c| in_sample_bounds(c[0], c[1], source_width, source_height))
            .collect();
        Ok(PixelMapping {
            width,
            height,
            source_width,
            source_height,
            coords,
            valid,
        })
    }
}

/// Whether a continuous coordinate has all four bilinear neighbors in bounds.
#[inline]
pub fn in_sample_bounds(u: f64, v: f64, width: usize, height: usize) -> bool {
    u >= 0.5 && u <= width as f64 - 0.5 && v >= 0.5 && v <= height as f64 - 0.5
}

/// Maps every target pixel into the source view: lift by the distance map
/// along the cached ray, transform with the relative pose, project with the
/// source intrinsics. Pixels fail (validity false) when the distance is
/// invalid, the ray is missing, projection fails, or the result cannot be
/// sampled from the source image.
pub fn pixel_map(
    distances: &DistanceMap<f32>,
    source_from_target: &RigidTransform<f64>,
    target_cam: &MeiIntrinsics<f64>,
    source_cam: &MeiIntrinsics<f64>,
    rays: &RayTable,
) -> Result<PixelMapping, WarpError> {
    let width = target_cam.width as usize;
    let height = target_cam.height as usize;
    if distances.width() != width || distances.height() != height {
        return Err(WarpError::DimensionMismatch {
            context: format!(
                "distance map {}x{} vs camera {width}x{height}",
                distances.width(),
                distances.height()
            ),
        });
    }
    if rays.width() != width || rays.height() != height {
        return Err(WarpError::DimensionMismatch {
            context: format!(
                "ray table {}x{} vs camera {width}x{height}",
                rays.width(),
                rays.height()
            ),
        });
    }
    let source_width = source_cam.width as usize;
    let source_height = source_cam.height as usize;
    let mut coords = vec![[0.0, 0.0]; width * height];
    let mut valid = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            if !distances.is_valid(x, y) {
                continue;
            }
            let Some(ray) = rays.ray(x, y) else { continue };
            let point = ray * distances.get(x, y) as f64;
            let moved = source_from_target.apply(&point);
            let Ok(px) = source_cam.project(&moved) else {
                continue;
            };
            if in_sample_bounds(px.u, px.v, source_width, source_height) {
                coords[idx] = [px.u, px.v];
                valid[idx] = true;
            }
        }
    }
    Ok(PixelMapping {
        width,
        height,
        source_width,
        source_height,
        coords,
        valid,
    })
}

/// Bilinear sample of one channel at a continuous coordinate, in the
/// pixel-center convention. Caller guarantees `in_sample_bounds`.
#[inline]
pub fn sample_bilinear(image: &ImageGrid, u: f64, v: f64, c: usize) -> f64 {
    let x = u - 0.5;
    let y = v - 0.5;
    let w = image.width();
    let h = image.height();
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = image.get(x0, y0, c) as f64;
    let v10 = image.get(x1, y0, c) as f64;
    let v01 = image.get(x0, y1, c) as f64;
    let v11 = image.get(x1, y1, c) as f64;
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

/// Resamples `source` at the mapped coordinates.
///
/// Output pixels are valid where the mapping is valid and all four bilinear
/// neighbors are in bounds; invalid pixels are written as zero.
pub fn warp(source: &ImageGrid, mapping: &PixelMapping) -> Result<(ImageGrid, ValidityMask), WarpError> {
    if source.width() != mapping.source_width || source.height() != mapping.source_height {
        return Err(WarpError::DimensionMismatch {
            context: format!(
                "source image {}x{} vs mapping built for {}x{}",
                source.width(),
                source.height(),
                mapping.source_width,
                mapping.source_height
            ),
        });
    }
    let mut out = ImageGrid::new(mapping.width, mapping.height, source.channels())
        .expect("source channels already validated");
    let mut mask = ValidityMask::all_invalid(mapping.width, mapping.height);
    for y in 0..mapping.height {
        for x in 0..mapping.width {
            let Some([u, v]) = mapping.get(x, y) else {
                continue;
            };
            for c in 0..source.channels() {
                out.set(x, y, c, sample_bilinear(source, u, v, c) as f32);
            }
            mask.set(x, y, true);
        }
    }
    Ok((out, mask))
}

/// Photometric loss output: valid-pixel mean plus the per-pixel grid.
#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    pub mean: f64,
    pub per_pixel: Grid<f64>,
    pub valid: ValidityMask,
}

/// `alpha (1 - SSIM)/2 + (1 - alpha) |delta|` per pixel, averaged over
/// channels; SSIM uses a mask-aware 3x3 window. The scalar is the mean over
/// valid pixels, reduced pairwise for run-to-run stability.
pub fn photometric_loss(
    target: &ImageGrid,
    warped: &ImageGrid,
    mask: &ValidityMask,
) -> Result<PhotometricLoss, WarpError> {
    let (grid, valid) = per_pixel_loss(target, warped, mask)?;
    let values: Vec<f64> = (0..target.height())
        .flat_map(|y| (0..target.width()).map(move |x| (x, y)))
        .filter(|(x, y)| valid.get(*x, *y))
        .map(|(x, y)| *grid.get(x, y))
        .collect();
    if values.is_empty() {
        return Err(WarpError::EmptyMask);
    }
    let mean = pairwise_sum(&values) / values.len() as f64;
    Ok(PhotometricLoss {
        mean,
        per_pixel: grid,
        valid,
    })
}

/// Per-pixel loss grid without the non-empty-mask requirement.
pub fn per_pixel_loss(
    target: &ImageGrid,
    warped: &ImageGrid,
    mask: &ValidityMask,
) -> Result<(Grid<f64>, ValidityMask), WarpError> {
    let (w, h) = (target.width(), target.height());
    if warped.width() != w
        || warped.height() != h
        || warped.channels() != target.channels()
        || mask.width() != w
        || mask.height() != h
    {
        return Err(WarpError::DimensionMismatch {
            context: "target, warped, and mask must share dimensions".into(),
        });
    }
    let mut grid = Grid::filled(w, h, 0.0f64);
    let mut valid = ValidityMask::all_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            grid.set(x, y, loss_at(target, warped, mask, x, y));
            valid.set(x, y, true);
        }
    }
    Ok((grid, valid))
}

/// Loss at one pixel; callers guarantee `mask.get(x, y)`.
pub(crate) fn loss_at(
    target: &ImageGrid,
    warped: &ImageGrid,
    mask: &ValidityMask,
    x: usize,
    y: usize,
) -> f64 {
    let channels = target.channels();
    let mut ssim_term = 0.0;
    let mut l1_term = 0.0;
    for c in 0..channels {
        let ssim = ssim_window(target, warped, mask, x, y, c);
        ssim_term += (1.0 - ssim) * 0.5;
        l1_term += (target.get(x, y, c) as f64 - warped.get(x, y, c) as f64).abs();
    }
    let n = channels as f64;
    LOSS_ALPHA * ssim_term / n + (1.0 - LOSS_ALPHA) * l1_term / n
}

/// SSIM over the 3x3 window centered at `(x, y)`, using only in-bounds
/// neighbors that are valid under the mask (population statistics).
fn ssim_window(
    target: &ImageGrid,
    warped: &ImageGrid,
    mask: &ValidityMask,
    x: usize,
    y: usize,
    c: usize,
) -> f64 {
    let (w, h) = (target.width() as isize, target.height() as isize);
    let (mut sum_t, mut sum_w, mut sum_tt, mut sum_ww, mut sum_tw) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n = 0.0;
    for dy in -SSIM_RADIUS..=SSIM_RADIUS {
        for dx in -SSIM_RADIUS..=SSIM_RADIUS {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !mask.get(nx, ny) {
                continue;
            }
            let t = target.get(nx, ny, c) as f64;
            let s = warped.get(nx, ny, c) as f64;
            sum_t += t;
            sum_w += s;
            sum_tt += t * t;
            sum_ww += s * s;
            sum_tw += t * s;
            n += 1.0;
        }
    }
    debug_assert!(n >= 1.0, "center pixel must be valid");
    let mu_t = sum_t / n;
    let mu_w = sum_w / n;
    let var_t = (sum_tt / n - mu_t * mu_t).max(0.0);
    let var_w = (sum_ww / n - mu_w * mu_w).max(0.0);
    let cov = sum_tw / n - mu_t * mu_w;
    ((2.0 * mu_t * mu_w + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_t * mu_t + mu_w * mu_w + SSIM_C1) * (var_t + var_w + SSIM_C2))
}

/// Per-pixel minimum across per-source loss grids. A pixel is valid if it is
/// valid in any input; the minimum runs over the valid entries only.
pub fn min_reprojection_loss(
    losses: &[(Grid<f64>, ValidityMask)],
) -> Result<(Grid<f64>, ValidityMask), WarpError> {
    let Some(((first, _), _)) = losses.split_first() else {
        return Err(WarpError::EmptyInput);
    };
    let (w, h) = (first.width(), first.height());
    for (grid, mask) in losses {
        if grid.width() != w || grid.height() != h || mask.width() != w || mask.height() != h {
            return Err(WarpError::DimensionMismatch {
                context: "loss grids must share dimensions".into(),
            });
        }
    }
    let mut out = Grid::filled(w, h, 0.0f64);
    let mut valid = ValidityMask::all_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<f64> = None;
            for (grid, mask) in losses {
                if mask.get(x, y) {
                    let v = *grid.get(x, y);
                    best = Some(match best {
                        Some(b) if b <= v => b,
                        _ => v,
                    });
                }
            }
            if let Some(b) = best {
                out.set(x, y, b);
                valid.set(x, y, true);
            }
        }
    }
    Ok((out, valid))
}

/// Marks pixels whose 3x3 intensity variance exceeds `threshold`: the pixels
/// where photometric evidence can localize a minimum.
pub fn texture_mask(image: &ImageGrid, threshold: f64) -> ValidityMask {
    let (w, h) = (image.width(), image.height());
    let mut mask = ValidityMask::all_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut sum_sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let v = image.luma(nx as usize, ny as usize) as f64;
                    sum += v;
                    sum_sq += v * v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            mask.set(x, y, sum_sq / n - mean * mean > threshold);
        }
    }
    mask
}
