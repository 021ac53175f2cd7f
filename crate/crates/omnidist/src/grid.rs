//! Dense raster containers shared across the pipeline.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("data length {len} does not match {width}x{height}x{channels}")]
    BadDataLength {
        len: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    IntensityOutOfRange { value: f32, index: usize },
    #[error("channel count {0} unsupported (expected 1 or 3)")]
    BadChannelCount(usize),
}

/// Row-major rectangular buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, GridError> {
        if data.len() != width * height {
            return Err(GridError::BadDataLength {
                len: data.len(),
                width,
                height,
                channels: 1,
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Intensity raster in `[0, 1]`, one or three interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, GridError> {
        if channels != 1 && channels != 3 {
            return Err(GridError::BadChannelCount(channels));
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if channels != 1 && channels != 3 {
            return Err(GridError::BadChannelCount(channels));
        }
        if data.len() != width * height * channels {
            return Err(GridError::BadDataLength {
                len: data.len(),
                width,
                height,
                channels,
            });
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(GridError::IntensityOutOfRange {
                value: data[index],
                index,
            });
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Mean intensity across channels at one pixel.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f32 {
        let base = (y * self.width + x) * self.channels;
        let mut sum = 0.0;
        for c in 0..self.channels {
            sum += self.data[base + c];
        }
        sum / self.channels as f32
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// 2x2 box-filtered half-resolution copy (odd trailing row/column dropped).
    pub fn downsample2(&self) -> ImageGrid {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut out = ImageGrid::new(w, h, self.channels).expect("valid channels");
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let (x0, y0) = (2 * x, 2 * y);
                    let x1 = (x0 + 1).min(self.width - 1);
                    let y1 = (y0 + 1).min(self.height - 1);
                    let sum = self.get(x0, y0, c)
                        + self.get(x1, y0, c)
                        + self.get(x0, y1, c)
                        + self.get(x1, y1, c);
                    out.set(x, y, c, sum * 0.25);
                }
            }
        }
        out
    }
}

/// Per-pixel Euclidean ray length in meters.
///
/// Invalid pixels (no measurement, solver miss) are stored as NaN; a value is
/// valid when it is finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap<S> {
    grid: Grid<S>,
}

impl<S: Scalar> DistanceMap<S> {
    pub fn invalid(width: usize, height: usize) -> Self {
        DistanceMap {
            grid: Grid::filled(width, height, S::of(f64::NAN)),
        }
    }

    pub fn constant(width: usize, height: usize, value: S) -> Self {
        DistanceMap {
            grid: Grid::filled(width, height, value),
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<S>) -> Result<Self, GridError> {
        Ok(DistanceMap {
            grid: Grid::from_vec(width, height, data)?,
        })
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> S {
        *self.grid.get(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: S) {
        self.grid.set(x, y, value);
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let v = self.get(x, y);
        v.is_finite() && v > S::zero()
    }

    pub fn data(&self) -> &[S] {
        self.grid.data()
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        self.grid.data_mut()
    }

    /// Bit-level equality, treating NaN entries as equal to themselves.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.width() == other.width()
            && self.height() == other.height()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Validity mask of finite, positive entries.
    pub fn validity(&self) -> ValidityMask {
        let mut mask = ValidityMask::all_invalid(self.width(), self.height());
        for y in 0..self.height() {
            for x in 0..self.width() {
                mask.set(x, y, self.is_valid(x, y));
            }
        }
        mask
    }
}

/// Boolean per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    grid: Grid<bool>,
}

impl ValidityMask {
    pub fn all_valid(width: usize, height: usize) -> Self {
        ValidityMask {
            grid: Grid::filled(width, height, true),
        }
    }

    pub fn all_invalid(width: usize, height: usize) -> Self {
        ValidityMask {
            grid: Grid::filled(width, height, false),
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        *self.grid.get(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.grid.set(x, y, value);
    }

    pub fn count_valid(&self) -> usize {
        self.grid.data().iter().filter(|v| **v).count()
    }

    /// Pixelwise AND with another mask of the same size.
    pub fn intersect(&self, other: &ValidityMask) -> Result<ValidityMask, GridError> {
        if !self.grid.same_size(&other.grid) {
            return Err(GridError::DimensionMismatch {
                expected_width: self.width(),
                expected_height: self.height(),
                width: other.width(),
                height: other.height(),
            });
        }
        let data = self
            .grid
            .data()
            .iter()
            .zip(other.grid.data())
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(ValidityMask {
            grid: Grid::from_vec(self.width(), self.height(), data)?,
        })
    }
}
